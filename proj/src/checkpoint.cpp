#include "uqcloud/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "uqcloud/error.hpp"

namespace uqcloud {

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(b, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
    put_u32(out, static_cast<std::uint32_t>(v & 0xffffffffu));
    put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

void put_f32(std::ostream& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

struct Reader {
    const std::string& buf;
    size_t pos = 0;

    const char* take(size_t n, const char* what) {
        require(pos + n <= buf.size(),
                std::string("checkpoint: truncated while reading ") + what);
        const char* p = buf.data() + pos;
        pos += n;
        return p;
    }
    std::uint32_t u32(const char* what) {
        const unsigned char* p = reinterpret_cast<const unsigned char*>(take(4, what));
        return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
               (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    }
    std::uint64_t u64(const char* what) {
        std::uint64_t lo = u32(what);
        std::uint64_t hi = u32(what);
        return lo | (hi << 32);
    }
    bool done() const { return pos == buf.size(); }
};

std::string format_double(double v) {
    std::ostringstream out;
    out << std::setprecision(17) << v;
    return out.str();
}

const char* site_name(DropSite s) {
    switch (s) {
        case DropSite::head1: return "head1";
        case DropSite::head2: return "head2";
        case DropSite::head3: return "head3";
    }
    fail("site_name: bad enum value");
}

DropSite site_from_name(const std::string& name) {
    if (name == "head1") return DropSite::head1;
    if (name == "head2") return DropSite::head2;
    if (name == "head3") return DropSite::head3;
    fail("checkpoint: unknown dropout site '" + name + "'");
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "checkpoint: cannot open '" + path + "' for writing");
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    const std::string meta = ck.meta.serialize();
    put_u64(out, meta.size());
    out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    for (const auto& [name, t] : ck.tensors) {  // map order = lexicographic
        require(!name.empty(), "checkpoint: tensor names must be non-empty");
        require(static_cast<std::int64_t>(t.data.size()) == shape_numel(t.shape),
                "checkpoint: shape/payload mismatch for '" + name + "'");
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
        for (auto e : t.shape) put_u32(out, static_cast<std::uint32_t>(e));
        for (float v : t.data) put_f32(out, v);
    }
    require(out.good(), "checkpoint: write to '" + path + "' failed");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "checkpoint: cannot open '" + path + "'");
    std::ostringstream slurp;
    slurp << in.rdbuf();
    const std::string buf = slurp.str();

    Reader r{buf};
    const char* magic = r.take(sizeof(kCheckpointMagic), "magic");
    require(std::memcmp(magic, kCheckpointMagic, sizeof(kCheckpointMagic)) == 0,
            "checkpoint: '" + path + "' is not a model checkpoint");
    const std::uint64_t meta_len = r.u64("metadata length");
    Checkpoint ck;
    ck.meta = KvConfig::parse(std::string(r.take(meta_len, "metadata"), meta_len));

    while (!r.done()) {
        const std::uint32_t name_len = r.u32("tensor name length");
        require(name_len > 0 && name_len <= 4096, "checkpoint: implausible tensor name length");
        std::string name(r.take(name_len, "tensor name"), name_len);
        const std::uint32_t rank = r.u32("tensor rank");
        require(rank <= 8, "checkpoint: implausible tensor rank for '" + name + "'");
        NamedTensor t;
        std::int64_t numel = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            std::uint32_t e = r.u32("tensor extent");
            require(e > 0 && numel <= (std::int64_t(1) << 40) / e,
                    "checkpoint: implausible tensor size for '" + name + "'");
            t.shape.push_back(static_cast<std::int64_t>(e));
            numel *= e;
        }
        t.data.resize(static_cast<size_t>(numel));
        const char* payload = r.take(static_cast<size_t>(numel) * 4, "tensor payload");
        for (std::int64_t i = 0; i < numel; ++i) {
            const unsigned char* p = reinterpret_cast<const unsigned char*>(payload + i * 4);
            std::uint32_t bits = static_cast<std::uint32_t>(p[0]) |
                                 (static_cast<std::uint32_t>(p[1]) << 8) |
                                 (static_cast<std::uint32_t>(p[2]) << 16) |
                                 (static_cast<std::uint32_t>(p[3]) << 24);
            t.data[static_cast<size_t>(i)] = std::bit_cast<float>(bits);
        }
        require(ck.tensors.emplace(std::move(name), std::move(t)).second,
                "checkpoint: duplicate tensor name");
    }
    return ck;
}

template <typename S>
Checkpoint checkpoint_from_net(SegNet<S>& net) {
    Checkpoint ck;
    ck.meta.set("regime", regime_name(net.cfg.regime));
    ck.meta.set("classes", std::to_string(net.cfg.classes));
    if (net.cfg.regime == Regime::dropout) {
        ck.meta.set("drop_prob", format_double(net.cfg.drop.drop_prob));
        std::string sites;
        for (auto s : net.cfg.drop.sites) {
            if (!sites.empty()) sites += ",";
            sites += site_name(s);
        }
        ck.meta.set("drop_sites", sites);
    }
    if (net.cfg.regime == Regime::bayes) {
        ck.meta.set("prior_sigma_w", format_double(net.cfg.prior_sigma_w));
        ck.meta.set("prior_sigma_b", format_double(net.cfg.prior_sigma_b));
    }
    for (auto& [name, t] : trainable_params(net)) {
        NamedTensor nt;
        nt.shape = t.shape();
        nt.data.assign(t.data().begin(), t.data().end());
        ck.tensors.emplace(name, std::move(nt));
    }
    for (auto& [name, p] : net.bn) {
        NamedTensor m, v;
        m.shape = Shape{static_cast<std::int64_t>(p.running_mean.size())};
        m.data.assign(p.running_mean.begin(), p.running_mean.end());
        v.shape = Shape{static_cast<std::int64_t>(p.running_var.size())};
        v.data.assign(p.running_var.begin(), p.running_var.end());
        ck.tensors.emplace(name + ".bn.running_mean", std::move(m));
        ck.tensors.emplace(name + ".bn.running_var", std::move(v));
    }
    return ck;
}

template <typename S>
SegNet<S> net_from_checkpoint(const Checkpoint& ck) {
    NetConfig cfg;
    cfg.regime = regime_from_name(ck.meta.get_required("regime"));
    cfg.classes = static_cast<int>(ck.meta.get_long("classes", -1));
    require(cfg.classes >= 2, "checkpoint: missing or bad class count");
    if (cfg.regime == Regime::dropout) {
        cfg.drop.drop_prob = ck.meta.get_double("drop_prob", 0.0);
        for (const auto& part : split_string(ck.meta.get("drop_sites", ""), ','))
            if (!trim(part).empty()) cfg.drop.sites.push_back(site_from_name(trim(part)));
    }
    if (cfg.regime == Regime::bayes) {
        cfg.prior_sigma_w = ck.meta.get_double("prior_sigma_w", cfg.prior_sigma_w);
        cfg.prior_sigma_b = ck.meta.get_double("prior_sigma_b", cfg.prior_sigma_b);
    }

    RngStream scratch(0);  // every weight is overwritten below
    auto net = make_seg_net<S>(cfg, scratch);

    auto params = trainable_params(net);
    size_t filled = 0;
    for (const auto& [name, src] : ck.tensors) {
        if (auto it = params.find(name); it != params.end()) {
            require(src.shape == it->second.shape(),
                    "checkpoint: shape mismatch for '" + name + "' (stored " +
                        shape_str(src.shape) + ", net " + shape_str(it->second.shape()) + ")");
            auto& dst = it->second.data();
            for (size_t i = 0; i < src.data.size(); ++i) dst[i] = static_cast<S>(src.data[i]);
            filled++;
            continue;
        }
        std::vector<S>* buffer = nullptr;
        for (auto& [lname, p] : net.bn) {
            if (name == lname + ".bn.running_mean") buffer = &p.running_mean;
            if (name == lname + ".bn.running_var") buffer = &p.running_var;
        }
        require(buffer != nullptr, "checkpoint: unexpected tensor '" + name + "'");
        require(src.shape == Shape{static_cast<std::int64_t>(buffer->size())},
                "checkpoint: shape mismatch for '" + name + "'");
        for (size_t i = 0; i < src.data.size(); ++i)
            (*buffer)[i] = static_cast<S>(src.data[i]);
        filled++;
    }
    const size_t expected = params.size() + 2 * net.bn.size();
    require(filled == expected, "checkpoint: expected " + std::to_string(expected) +
                                    " tensors, found " + std::to_string(filled));
    return net;
}

template Checkpoint checkpoint_from_net(SegNet<float>&);
template Checkpoint checkpoint_from_net(SegNet<double>&);
template SegNet<float> net_from_checkpoint(const Checkpoint&);
template SegNet<double> net_from_checkpoint(const Checkpoint&);

}  // namespace uqcloud
