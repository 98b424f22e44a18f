#include "advdiff/checkpoint.hpp"

#include <charconv>
#include <sstream>

#include "advdiff/binary_io.hpp"
#include "advdiff/error.hpp"

namespace advdiff {

namespace {

constexpr std::uint8_t kDtypeF32 = 0;

std::string format_int(long long v) { return std::to_string(v); }

const std::string& require(const Checkpoint& c, const std::string& key) {
    auto it = c.meta.find(key);
    if (it == c.meta.end()) throw CorruptFile("checkpoint is missing metadata key '" + key + "'");
    return it->second;
}

long long parse_int(const Checkpoint& c, const std::string& key) {
    const auto& s = require(c, key);
    long long v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) throw CorruptFile("bad integer for '" + key + "': " + s);
    return v;
}

std::uint64_t parse_u64(const Checkpoint& c, const std::string& key) {
    const auto& s = require(c, key);
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) throw CorruptFile("bad integer for '" + key + "': " + s);
    return v;
}

double parse_real(const Checkpoint& c, const std::string& key) {
    const auto& s = require(c, key);
    double v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) throw CorruptFile("bad real for '" + key + "': " + s);
    return v;
}

ExtraMeta extras(const Checkpoint& c) {
    ExtraMeta out;
    for (const auto& [k, v] : c.meta)
        if (k.rfind("extra.", 0) == 0) out[k.substr(6)] = v;
    return out;
}

template <typename T>
std::vector<CheckpointArray> export_params(const nn::Parameters<T>& p) {
    std::vector<CheckpointArray> arrays;
    for (std::size_t i = 0; i < p.info().size(); ++i) {
        const auto view = p[i];
        arrays.push_back({p.info()[i].name, p.info()[i].shape, std::vector<float>(view.begin(), view.end())});
    }
    return arrays;
}

void import_params(const Checkpoint& c, nn::Parameters<float>& p) {
    if (c.arrays.size() != p.info().size())
        throw ShapeMismatch("checkpoint holds " + std::to_string(c.arrays.size()) + " arrays, model expects " +
                            std::to_string(p.info().size()));
    for (std::size_t i = 0; i < c.arrays.size(); ++i) {
        const auto& a = c.arrays[i];
        const auto& info = p.info()[i];
        if (a.name != info.name || a.shape != info.shape)
            throw ShapeMismatch("checkpoint array '" + a.name + "' does not match model parameter '" + info.name + "'");
        std::copy(a.values.begin(), a.values.end(), p[i].begin());
    }
}

void add_extras(Checkpoint& c, const ExtraMeta& extra) {
    for (const auto& [k, v] : extra) c.meta["extra." + k] = v;
}

}  // namespace

std::string format_real(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    ByteWriter w;
    w.bytes("ADVDCKPT", 8);
    w.u32(kCheckpointVersion);
    w.str(ckpt.kind);
    w.u32(static_cast<std::uint32_t>(ckpt.meta.size()));
    for (const auto& [k, v] : ckpt.meta) {
        w.str(k);
        w.str(v);
    }
    w.u32(static_cast<std::uint32_t>(ckpt.arrays.size()));
    for (const auto& a : ckpt.arrays) {
        std::size_t numel = 1;
        for (int d : a.shape) numel *= static_cast<std::size_t>(d);
        if (numel != a.values.size()) throw ShapeMismatch("array '" + a.name + "' shape does not match its data");
        w.str(a.name);
        w.u32(static_cast<std::uint32_t>(a.shape.size()));
        for (int d : a.shape) w.u32(static_cast<std::uint32_t>(d));
        w.u8(kDtypeF32);
        w.u64(a.values.size() * sizeof(float));
        w.bytes(a.values.data(), a.values.size() * sizeof(float));
    }
    w.finish_with_checksum();
    w.write_file(path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    ByteReader r = ByteReader::from_file_checked(path);
    r.expect_magic("ADVDCKPT");
    const auto version = r.u32();
    if (version != kCheckpointVersion)
        throw VersionMismatch(path.string() + ": checkpoint version " + std::to_string(version) + ", expected " +
                              std::to_string(kCheckpointVersion));
    Checkpoint c;
    c.kind = r.str();
    const auto n_meta = r.u32();
    for (std::uint32_t i = 0; i < n_meta; ++i) {
        std::string k = r.str();
        c.meta[k] = r.str();
    }
    const auto n_arrays = r.u32();
    for (std::uint32_t i = 0; i < n_arrays; ++i) {
        CheckpointArray a;
        a.name = r.str();
        const auto ndim = r.u32();
        if (ndim > 8) throw CorruptFile(path.string() + ": implausible rank for '" + a.name + "'");
        std::size_t numel = 1;
        for (std::uint32_t d = 0; d < ndim; ++d) {
            a.shape.push_back(static_cast<int>(r.u32()));
            numel *= static_cast<std::size_t>(a.shape.back());
        }
        if (r.u8() != kDtypeF32) throw CorruptFile(path.string() + ": unsupported dtype for '" + a.name + "'");
        const auto n_bytes = r.u64();
        if (n_bytes != numel * sizeof(float) || n_bytes > r.remaining())
            throw CorruptFile(path.string() + ": byte count mismatch for '" + a.name + "'");
        a.values.resize(numel);
        r.read(a.values.data(), n_bytes);
        c.arrays.push_back(std::move(a));
    }
    r.expect_end();
    return c;
}

void save_classifier(const ConvClassifier& model, std::uint64_t train_seed, const std::filesystem::path& path,
                     const ExtraMeta& extra) {
    Checkpoint c;
    c.kind = "classifier";
    const auto& cfg = model.config();
    c.meta["model.channels"] = format_int(cfg.channels);
    std::string widths;
    for (std::size_t i = 0; i < cfg.widths.size(); ++i) widths += (i ? "," : "") + format_int(cfg.widths[i]);
    c.meta["model.widths"] = widths;
    c.meta["model.coord_channels"] = cfg.coord_channels ? "1" : "0";
    c.meta["model.spatial_head"] = cfg.spatial_head ? "1" : "0";
    c.meta["model.image_size"] = format_int(cfg.image_size);
    c.meta["train.seed"] = std::to_string(train_seed);
    add_extras(c, extra);
    c.arrays = export_params(model.net().params());
    write_checkpoint(c, path);
}

LoadedClassifier load_classifier(const std::filesystem::path& path) {
    const Checkpoint c = read_checkpoint(path);
    if (c.kind != "classifier") throw ShapeMismatch(path.string() + ": expected a classifier checkpoint, got " + c.kind);
    ClassifierConfig cfg;
    cfg.channels = static_cast<int>(parse_int(c, "model.channels"));
    cfg.widths.clear();
    std::stringstream ss(require(c, "model.widths"));
    for (std::string tok; std::getline(ss, tok, ',');) cfg.widths.push_back(std::stoi(tok));
    cfg.coord_channels = parse_int(c, "model.coord_channels") != 0;
    cfg.spatial_head = parse_int(c, "model.spatial_head") != 0;
    cfg.image_size = static_cast<int>(parse_int(c, "model.image_size"));
    LoadedClassifier out{ConvClassifier(cfg, 0), parse_u64(c, "train.seed"), extras(c)};
    import_params(c, out.model.net().params());
    return out;
}

void save_predictor(const EpsilonPredictor& model, const NoiseSchedule& schedule, std::uint64_t train_seed,
                    const std::filesystem::path& path, const ExtraMeta& extra) {
    Checkpoint c;
    c.kind = "epsilon_predictor";
    const auto& cfg = model.config();
    c.meta["unet.channels"] = format_int(cfg.channels);
    c.meta["unet.base_width"] = format_int(cfg.base_width);
    c.meta["unet.embed_dim"] = format_int(cfg.embed_dim);
    c.meta["unet.time_dim"] = format_int(cfg.time_dim);
    c.meta["schedule.num_steps"] = format_int(schedule.num_steps());
    c.meta["schedule.beta_start"] = format_real(schedule.beta_start());
    c.meta["schedule.beta_end"] = format_real(schedule.beta_end());
    c.meta["train.seed"] = std::to_string(train_seed);
    add_extras(c, extra);
    c.arrays = export_params(model.params());
    write_checkpoint(c, path);
}

LoadedPredictor load_predictor(const std::filesystem::path& path, const NoiseSchedule* expected) {
    const Checkpoint c = read_checkpoint(path);
    if (c.kind != "epsilon_predictor")
        throw ShapeMismatch(path.string() + ": expected an epsilon_predictor checkpoint, got " + c.kind);
    UNetConfig cfg;
    cfg.channels = static_cast<int>(parse_int(c, "unet.channels"));
    cfg.base_width = static_cast<int>(parse_int(c, "unet.base_width"));
    cfg.embed_dim = static_cast<int>(parse_int(c, "unet.embed_dim"));
    cfg.time_dim = static_cast<int>(parse_int(c, "unet.time_dim"));
    NoiseSchedule schedule = NoiseSchedule::linear(static_cast<int>(parse_int(c, "schedule.num_steps")),
                                                   parse_real(c, "schedule.beta_start"),
                                                   parse_real(c, "schedule.beta_end"));
    if (expected && !(schedule == *expected))
        throw ShapeMismatch(path.string() + ": checkpoint schedule (T=" + std::to_string(schedule.num_steps()) +
                            ") does not match the requested schedule (T=" + std::to_string(expected->num_steps()) +
                            ")");
    LoadedPredictor out{EpsilonPredictor(cfg, 0), std::move(schedule), parse_u64(c, "train.seed"), extras(c)};
    import_params(c, out.model.params());
    return out;
}

}  // namespace advdiff
