#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <vector>

#include "cmsc/model.hpp"

namespace cmsc {
namespace {

constexpr char kMagic[4] = {'C', 'M', 'S', 'C'};
constexpr std::uint32_t kVersion = 1;

struct NamedTensor {
    std::string name;
    std::vector<std::uint64_t> dims;
    std::vector<double>* values;
};

// Every model state vector, running BN statistics included, in a fixed order.
std::vector<NamedTensor> model_tensors(CmscModel& model) {
    std::vector<NamedTensor> out;
    auto add_conv = [&out](const std::string& prefix, Conv2dParams& conv) {
        const Shape s = conv.weight.shape();
        out.push_back({prefix + ".weight",
                       {static_cast<std::uint64_t>(s.n), static_cast<std::uint64_t>(s.c),
                        static_cast<std::uint64_t>(s.h), static_cast<std::uint64_t>(s.w)},
                       &conv.weight.values()});
        out.push_back({prefix + ".bias", {conv.bias.size()}, &conv.bias});
    };
    auto add_unit = [&](const std::string& prefix, ConvBnUnit& unit) {
        add_conv(prefix + ".conv", unit.conv);
        out.push_back({prefix + ".bn.gamma", {unit.bn.gamma.size()}, &unit.bn.gamma});
        out.push_back({prefix + ".bn.beta", {unit.bn.beta.size()}, &unit.bn.beta});
        out.push_back(
            {prefix + ".bn.running_mean", {unit.bn.running_mean.size()}, &unit.bn.running_mean});
        out.push_back(
            {prefix + ".bn.running_var", {unit.bn.running_var.size()}, &unit.bn.running_var});
    };
    add_unit("feature", model.feature_extract);
    for (std::size_t q = 0; q < model.subnetworks.size(); ++q) {
        const std::string sp = "stage" + std::to_string(q);
        add_unit(sp + ".entry", model.subnetworks[q].entry);
        for (std::size_t m = 0; m < model.subnetworks[q].modules.size(); ++m) {
            MscModule& mod = model.subnetworks[q].modules[m];
            const std::string mp = sp + ".msc" + std::to_string(m);
            add_unit(mp + ".b1u0", mod.branch1[0]);
            add_unit(mp + ".b1u1", mod.branch1[1]);
            add_unit(mp + ".b2u0", mod.branch2[0]);
            add_unit(mp + ".b2u1", mod.branch2[1]);
        }
    }
    for (std::size_t r = 0; r < model.reconstructions.size(); ++r)
        add_conv("recon" + std::to_string(r), model.reconstructions[r]);
    out.push_back({"ensemble.w", {model.ensemble_weights.size()}, &model.ensemble_weights});
    return out;
}

class Writer {
public:
    explicit Writer(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw std::runtime_error("save_model: cannot open '" + path + "' for writing");
    }
    void bytes(const void* p, std::size_t n) {
        out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    }
    void u32(std::uint32_t v) {
        unsigned char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
        bytes(b, 4);
    }
    void u64(std::uint64_t v) {
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
        bytes(b, 8);
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    bool good() const { return static_cast<bool>(out_); }
    void close() { out_.close(); }

private:
    std::ofstream out_;
};

class Reader {
public:
    explicit Reader(const std::string& path) : in_(path, std::ios::binary) {
        if (!in_) throw std::runtime_error("load_model: cannot open '" + path + "'");
    }
    void bytes(void* p, std::size_t n) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (in_.gcount() != static_cast<std::streamsize>(n))
            throw std::runtime_error("load_model: truncated file");
    }
    std::uint32_t u32() {
        unsigned char b[4];
        bytes(b, 4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        unsigned char b[8];
        bytes(b, 8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }

private:
    std::ifstream in_;
};

}  // namespace

void save_model(const CmscModel& model, const std::string& path) {
    // Write to a temp file and rename, so failures never leave partial output.
    const std::string tmp = path + ".tmp";
    {
        Writer w(tmp);
        w.bytes(kMagic, 4);
        w.u32(kVersion);
        w.u32(static_cast<std::uint32_t>(model.config.stages));
        w.u32(static_cast<std::uint32_t>(model.config.modules_per_stage));
        w.u32(static_cast<std::uint32_t>(model.config.channels));
        w.u32(static_cast<std::uint32_t>(model.config.k1));
        w.u32(static_cast<std::uint32_t>(model.config.k2));
        w.f64(model.config.leaky_slope);
        std::uint32_t flags = 0;
        if (model.config.use_rfl) flags |= 1u;
        if (model.config.use_cascaded_supervision) flags |= 2u;
        if (model.config.share_reconstruction) flags |= 4u;
        w.u32(flags);

        auto tensors = model_tensors(const_cast<CmscModel&>(model));
        w.u64(tensors.size());
        for (const NamedTensor& t : tensors) {
            w.u32(static_cast<std::uint32_t>(t.name.size()));
            w.bytes(t.name.data(), t.name.size());
            w.u32(static_cast<std::uint32_t>(t.dims.size()));
            for (std::uint64_t d : t.dims) w.u64(d);
            for (double v : *t.values) w.f64(v);
        }
        if (!w.good()) throw std::runtime_error("save_model: write failed for '" + tmp + "'");
        w.close();
    }
    std::filesystem::rename(tmp, path);
}

CmscModel load_model(const std::string& path) {
    Reader r(path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("load_model: '" + path + "' is not a CMSC model file (bad magic)");
    const std::uint32_t version = r.u32();
    if (version != kVersion)
        throw std::runtime_error("load_model: unsupported format version " +
                                 std::to_string(version));

    ModelConfig cfg;
    cfg.stages = static_cast<int>(r.u32());
    cfg.modules_per_stage = static_cast<int>(r.u32());
    cfg.channels = static_cast<int>(r.u32());
    cfg.k1 = static_cast<int>(r.u32());
    cfg.k2 = static_cast<int>(r.u32());
    cfg.leaky_slope = r.f64();
    const std::uint32_t flags = r.u32();
    cfg.use_rfl = (flags & 1u) != 0;
    cfg.use_cascaded_supervision = (flags & 2u) != 0;
    cfg.share_reconstruction = (flags & 4u) != 0;
    cfg.validate();

    CmscModel model = CmscModel::build(cfg);
    auto tensors = model_tensors(model);
    const std::uint64_t count = r.u64();
    if (count != tensors.size())
        throw std::runtime_error("load_model: expected " + std::to_string(tensors.size()) +
                                 " tensors, file has " + std::to_string(count));
    for (NamedTensor& t : tensors) {
        const std::uint32_t name_len = r.u32();
        std::string name(name_len, '\0');
        r.bytes(name.data(), name_len);
        if (name != t.name)
            throw std::runtime_error("load_model: unexpected tensor '" + name + "', wanted '" +
                                     t.name + "'");
        const std::uint32_t rank = r.u32();
        if (rank != t.dims.size())
            throw std::runtime_error("load_model: tensor '" + name + "' has rank " +
                                     std::to_string(rank));
        std::uint64_t total = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            const std::uint64_t d = r.u64();
            if (d != t.dims[i])
                throw std::runtime_error("load_model: tensor '" + name + "' dimension mismatch");
            total *= d;
        }
        for (std::uint64_t i = 0; i < total; ++i) (*t.values)[i] = r.f64();
    }
    return model;
}

}  // namespace cmsc
