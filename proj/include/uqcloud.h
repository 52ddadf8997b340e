#ifndef UQCLOUD_H
#define UQCLOUD_H

/* C interface to the uqcloud segmentation library.
 *
 * Every entry point returns a uqc_status; on failure the message for the
 * calling thread is kept until the next call and can be read with
 * uqc_last_error(). Handles returned through out-parameters are owned by
 * the caller and released with the matching _free function. NULL option
 * strings mean "all defaults"; otherwise options are flat `key = value`
 * lines, one per line, '#' starting a comment.
 */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum uqc_status {
    UQC_OK = 0,
    UQC_ERROR = 1,       /* operation failed; uqc_last_error() says why */
    UQC_BAD_ARGUMENT = 2 /* NULL handle or out-parameter */
} uqc_status;

/* Message of the most recent failure on this thread; never NULL. */
const char* uqc_last_error(void);

/* Library version as "major.minor.patch". */
const char* uqc_version(void);

/* Cap the BLAS thread pool; a no-op when the linked BLAS has no such knob. */
uqc_status uqc_set_threads(int n);

/* Receives one line of progress output (no trailing newline). */
typedef void (*uqc_log_fn)(const char* line, void* user);

typedef struct uqc_cloud uqc_cloud; /* point set: xyz + rgb + optional labels */
typedef struct uqc_model uqc_model; /* trained network restored from a checkpoint */

/* ---- point clouds ------------------------------------------------------ */

/* Reads .ply (binary or ascii) or .xyz by extension. The room name used in
 * reports is taken from the file stem. */
uqc_status uqc_cloud_load(const char* path, uqc_cloud** out);
uqc_status uqc_cloud_write(const uqc_cloud* cloud, const char* path);
int64_t uqc_cloud_size(const uqc_cloud* cloud); /* -1 on a NULL handle */
void uqc_cloud_free(uqc_cloud* cloud);

/* ---- models ------------------------------------------------------------ */

uqc_status uqc_model_load(const char* path, uqc_model** out);
/* "frequentist", "dropout", or "bayes"; NULL on a NULL handle. */
const char* uqc_model_regime(const uqc_model* model);
int uqc_model_classes(const uqc_model* model); /* -1 on a NULL handle */
void uqc_model_free(uqc_model* model);

/* ---- drivers ----------------------------------------------------------- */

/* Generates `scenes` synthetic rooms into out_dir as scene_<i>.ply, scene i
 * seeded with seed + i. spec_path may be NULL for the default room; when
 * scenes <= 0 the count comes from the spec's `scenes` key (default 1). */
uqc_status uqc_synth(const char* spec_path, const char* out_dir, uint64_t seed, int scenes,
                     uqc_log_fn log, void* user);

/* Trains a network of the given kind ("frequentist", "dropout", "bayes";
 * "bayesian" is accepted as an alias) on every cloud file in data_dir and
 * writes the final checkpoint to checkpoint_out. Option keys: epochs,
 * batch_size, lr, decay_factor, decay_period, momentum, weight_decay,
 * drop_prob, drop_sites, prior_sigma_w, prior_sigma_b, classes, block_size,
 * checkpoint_period, seed. log receives one `epoch,step,loss,lr` line per
 * optimizer step (step -1 rows carry epoch means). */
uqc_status uqc_train(const char* kind, const char* data_dir, const char* opts,
                     const char* checkpoint_out, uqc_log_fn log, void* user);

/* Scores the model on every cloud file in data_dir and writes a metrics CSV
 * (accuracy / mean IoU per room, plus uncertainty-filtered columns for each
 * requested measure). Option keys: k (posterior samples), measures
 * (comma-separated names or "all"), sigmas, block_size, seed. log receives
 * one line per finished room. */
uqc_status uqc_evaluate(const char* checkpoint, const char* data_dir, const char* opts,
                        const char* csv_out, uqc_log_fn log, void* user);

/* Single deterministic pass (dropout off, variational net at its mean
 * weights); writes the cloud with predicted labels, painted with the class
 * palette when the model's class count matches it. Option keys: block_size,
 * seed. */
uqc_status uqc_predict(const char* checkpoint, const char* cloud_path, const char* opts,
                       const char* ply_out);

/* Monte-Carlo inference; writes a certainty map (uncertain points red) to
 * ply_out. Option keys: k, measure, sigmas, block_size, seed, plus optional
 * output paths csv (per-point values) and stack (raw sample stack). */
uqc_status uqc_uncertainty(const char* checkpoint, const char* cloud_path, const char* opts,
                           const char* ply_out);

/* Writes the per-class quantile table for one point of a saved sample stack. */
uqc_status uqc_export_quantiles(const char* stack_path, int64_t point, const char* out_path);

#ifdef __cplusplus
}
#endif

#endif /* UQCLOUD_H */
