#pragma once

#include <bit>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mmgf/dataset.hpp"
#include "mmgf/error.hpp"
#include "mmgf/metrics.hpp"
#include "mmgf/train.hpp"

namespace mmgf::io {

namespace fs = std::filesystem;
using njson = nlohmann::json;

// Shortest round-trip decimal rendering; locale-independent by construction.
inline std::string format_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string() + " for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw IoError("read failed for " + path.string());
    return ss.str();
}

// Write to <path>.tmp in the same directory, then rename over the target, so
// a crash mid-write never leaves a half-written file under the final name.
inline void write_text_atomic(const fs::path& path, const std::string& content) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) {
            std::error_code ignore;
            fs::remove(tmp, ignore);
            throw IoError("write failed for " + tmp.string());
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        std::error_code ignore;
        fs::remove(tmp, ignore);
        throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " +
                      ec.message());
    }
}

// --- flat key = value files (manifest, run config) ---

struct KvEntry {
    std::string key;
    std::string value;
    int line = 0;
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace detail

// Lines of "key = value"; '#' starts a comment, blank lines are skipped.
inline std::vector<KvEntry> parse_kv_text(const std::string& text, const std::string& origin) {
    std::vector<KvEntry> entries;
    std::istringstream in(text);
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        std::size_t hash = raw.find('#');
        if (hash != std::string::npos) raw = raw.substr(0, hash);
        std::string s = detail::trim(raw);
        if (s.empty()) continue;
        std::size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(line) +
                              ": expected 'key = value', got '" + s + "'");
        KvEntry e;
        e.key = detail::trim(s.substr(0, eq));
        e.value = detail::trim(s.substr(eq + 1));
        e.line = line;
        if (e.key.empty())
            throw ConfigError(origin + ":" + std::to_string(line) + ": empty key");
        entries.push_back(std::move(e));
    }
    return entries;
}

inline std::string render_kv(const std::vector<std::pair<std::string, std::string>>& kv) {
    std::string out;
    for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
    return out;
}

namespace detail {

inline std::string kv_context(const KvEntry& e, const std::string& origin) {
    return origin + ":" + std::to_string(e.line) + ": key '" + e.key + "'";
}

inline double kv_double(const KvEntry& e, const std::string& origin) {
    double v = 0.0;
    const char* b = e.value.data();
    const char* end = b + e.value.size();
    auto res = std::from_chars(b, end, v);
    if (res.ec != std::errc{} || res.ptr != end)
        throw ConfigError(kv_context(e, origin) + ": expected a number, got '" + e.value + "'");
    return v;
}

inline std::uint64_t kv_u64(const KvEntry& e, const std::string& origin) {
    std::uint64_t v = 0;
    const char* b = e.value.data();
    const char* end = b + e.value.size();
    auto res = std::from_chars(b, end, v);
    if (res.ec != std::errc{} || res.ptr != end)
        throw ConfigError(kv_context(e, origin) + ": expected a nonnegative integer, got '" +
                          e.value + "'");
    return v;
}

inline std::size_t kv_size(const KvEntry& e, const std::string& origin) {
    return static_cast<std::size_t>(kv_u64(e, origin));
}

inline bool kv_bool(const KvEntry& e, const std::string& origin) {
    if (e.value == "true" || e.value == "1") return true;
    if (e.value == "false" || e.value == "0") return false;
    throw ConfigError(kv_context(e, origin) + ": expected true or false, got '" + e.value + "'");
}

template <typename Enum>
Enum kv_enum(const KvEntry& e, const std::string& origin,
             const std::vector<std::pair<std::string, Enum>>& table) {
    for (const auto& [name, val] : table)
        if (e.value == name) return val;
    std::string allowed;
    for (const auto& [name, val] : table) {
        if (!allowed.empty()) allowed += ", ";
        allowed += name;
    }
    throw ConfigError(kv_context(e, origin) + ": expected one of {" + allowed + "}, got '" +
                      e.value + "'");
}

}  // namespace detail

// --- run configuration ---

inline void apply_config_entry(TrainConfig& cfg, const KvEntry& e, const std::string& origin) {
    using detail::kv_bool;
    using detail::kv_double;
    using detail::kv_enum;
    using detail::kv_size;
    using detail::kv_u64;
    const std::string& k = e.key;
    if (k == "epochs") cfg.epochs = kv_size(e, origin);
    else if (k == "lr") cfg.lr = kv_double(e, origin);
    else if (k == "knn_k") cfg.knn_k = kv_size(e, origin);
    else if (k == "metric")
        cfg.metric = kv_enum<Metric>(e, origin, {{"euclidean", Metric::euclidean},
                                                 {"cosine", Metric::cosine}});
    else if (k == "gnn")
        cfg.gnn = kv_enum<GnnKind>(e, origin, {{"gat", GnnKind::gat}, {"gcn", GnnKind::gcn}});
    else if (k == "heads") cfg.heads = kv_size(e, origin);
    else if (k == "gnn_layers") cfg.gnn_layers = kv_size(e, origin);
    else if (k == "hidden") cfg.hidden = kv_size(e, origin);
    else if (k == "embed_dim") cfg.embed_dim = kv_size(e, origin);
    else if (k == "fuse_dim") cfg.fuse_dim = kv_size(e, origin);
    else if (k == "delta") cfg.delta = kv_double(e, origin);
    else if (k == "beta") cfg.beta = kv_double(e, origin);
    else if (k == "seed") cfg.seed = kv_u64(e, origin);
    else if (k == "folds") cfg.folds = kv_size(e, origin);
    else if (k == "normalize_similarity") cfg.normalize_similarity = kv_bool(e, origin);
    else if (k == "leaky_slope") cfg.leaky_slope = kv_double(e, origin);
    else if (k == "diag_reference")
        cfg.diag_reference =
            kv_enum<DiagReference>(e, origin, {{"average", DiagReference::average},
                                               {"image", DiagReference::image},
                                               {"clinical", DiagReference::clinical}});
    else if (k == "protocol")
        cfg.protocol =
            kv_enum<Protocol>(e, origin, {{"cv", Protocol::cv}, {"fixed", Protocol::fixed}});
    else if (k == "fixed_train_size") cfg.fixed_train_size = kv_size(e, origin);
    else if (k == "encoder")
        cfg.encoder.kind =
            kv_enum<EncoderKind>(e, origin, {{"identity", EncoderKind::identity},
                                             {"dense", EncoderKind::dense},
                                             {"conv", EncoderKind::conv}});
    else if (k == "latent_dim") cfg.encoder.latent_dim = kv_size(e, origin);
    else if (k == "conv_channels1") cfg.encoder.conv_c1 = kv_size(e, origin);
    else if (k == "conv_channels2") cfg.encoder.conv_c2 = kv_size(e, origin);
    else if (k == "conv_kernel") cfg.encoder.conv_kernel = kv_size(e, origin);
    else if (k == "conv_stride") cfg.encoder.conv_stride = kv_size(e, origin);
    else if (k == "pretrain_epochs") cfg.encoder.pretrain_epochs = kv_size(e, origin);
    else if (k == "pretrain_lr") cfg.encoder.pretrain_lr = kv_double(e, origin);
    else if (k == "encoder_activation")
        cfg.encoder.activation = kv_enum<Activation>(
            e, origin, {{"elu", Activation::elu}, {"identity", Activation::identity}});
    else
        throw ConfigError(origin + ":" + std::to_string(e.line) + ": unknown key '" + k + "'");
}

inline TrainConfig parse_run_config_text(const std::string& text, const std::string& origin) {
    TrainConfig cfg;
    std::set<std::string> seen;
    for (const KvEntry& e : parse_kv_text(text, origin)) {
        if (!seen.insert(e.key).second)
            throw ConfigError(origin + ":" + std::to_string(e.line) + ": duplicate key '" +
                              e.key + "'");
        apply_config_entry(cfg, e, origin);
    }
    try {
        validate_train_config(cfg);
    } catch (const Error& err) {
        throw ConfigError(origin + ": " + err.what());
    }
    return cfg;
}

inline TrainConfig parse_run_config(const fs::path& path) {
    return parse_run_config_text(read_text(path), path.string());
}

// --- images.bin: "MMGF", u16 version, u32 N/H/W, N*H*W float32, all LE ---

namespace detail {

inline void append_u16(std::string& s, std::uint16_t v) {
    s.push_back(static_cast<char>(v & 0xff));
    s.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void append_u32(std::string& s, std::uint32_t v) {
    for (int shift = 0; shift < 32; shift += 8)
        s.push_back(static_cast<char>((v >> shift) & 0xff));
}

inline std::uint32_t take_bits(const std::string& s, std::size_t& off, std::size_t nbytes,
                               const std::string& origin) {
    if (off + nbytes > s.size()) throw DataError(origin + ": truncated file");
    std::uint32_t v = 0;
    for (std::size_t i = 0; i < nbytes; ++i)
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[off + i])) << (8 * i);
    off += nbytes;
    return v;
}

}  // namespace detail

inline void write_images_bin(const fs::path& path, const Tensor& images) {
    if (images.ndim() != 4 || images.dim(1) != 1)
        throw ShapeError("write_images_bin: expected [N x 1 x H x W] images");
    const std::size_t n = images.dim(0), h = images.dim(2), w = images.dim(3);
    std::string buf;
    buf.reserve(14 + 4 * n * h * w);
    buf += "MMGF";
    detail::append_u16(buf, 1);
    detail::append_u32(buf, static_cast<std::uint32_t>(n));
    detail::append_u32(buf, static_cast<std::uint32_t>(h));
    detail::append_u32(buf, static_cast<std::uint32_t>(w));
    for (std::size_t i = 0; i < images.numel(); ++i) {
        const float f = static_cast<float>(images.at(i));
        detail::append_u32(buf, std::bit_cast<std::uint32_t>(f));
    }
    write_text_atomic(path, buf);
}

inline Tensor read_images_bin(const fs::path& path) {
    const std::string buf = read_text(path);
    const std::string origin = path.string();
    if (buf.size() < 4 || buf.compare(0, 4, "MMGF") != 0)
        throw DataError(origin + ": bad magic, not an image tensor file");
    std::size_t off = 4;
    const std::uint32_t version = detail::take_bits(buf, off, 2, origin);
    if (version != 1)
        throw DataError(origin + ": unsupported version " + std::to_string(version));
    const std::size_t n = detail::take_bits(buf, off, 4, origin);
    const std::size_t h = detail::take_bits(buf, off, 4, origin);
    const std::size_t w = detail::take_bits(buf, off, 4, origin);
    if (n == 0 || h == 0 || w == 0) throw DataError(origin + ": empty image dimensions");
    if (buf.size() != off + 4 * n * h * w)
        throw DataError(origin + ": payload size does not match header dimensions");
    Tensor images = Tensor::zeros({n, 1, h, w});
    for (std::size_t i = 0; i < n * h * w; ++i) {
        const std::uint32_t bits = detail::take_bits(buf, off, 4, origin);
        images.at(i) = static_cast<double>(std::bit_cast<float>(bits));
    }
    return images;
}

// --- clinical.csv: id, feature columns, label in {normal, abnormal} ---

inline const char* label_name(bool abnormal) { return abnormal ? "abnormal" : "normal"; }

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

inline void write_clinical_csv(const fs::path& path, const MultimodalDataset& data) {
    const std::size_t n = data.size(), f = data.clinical.dim(1);
    const std::vector<std::string> names = clinical_feature_names(f);
    std::string out = "id";
    for (std::size_t j = 0; j < f; ++j) out += "," + names[j];
    out += ",label\n";
    for (std::size_t i = 0; i < n; ++i) {
        out += data.ids[i];
        for (std::size_t j = 0; j < f; ++j) out += "," + format_double(data.clinical.at(i, j));
        out += ",";
        out += label_name(data.labels.at(i, 1) == 1.0);
        out += "\n";
    }
    write_text_atomic(path, out);
}

struct ClinicalTable {
    std::vector<std::string> ids;
    Tensor features;  // [N x F]
    Tensor labels;    // [N x 2], one-hot [normal, abnormal]
};

inline double parse_csv_double(const std::string& field, const std::string& origin, int line) {
    double v = 0.0;
    const char* b = field.data();
    const char* end = b + field.size();
    auto res = std::from_chars(b, end, v);
    if (res.ec != std::errc{} || res.ptr != end)
        throw DataError(origin + ":" + std::to_string(line) + ": expected a number, got '" +
                        field + "'");
    return v;
}

inline ClinicalTable read_clinical_csv(const fs::path& path) {
    const std::string origin = path.string();
    std::istringstream in(read_text(path));
    std::string raw;
    if (!std::getline(in, raw)) throw DataError(origin + ": empty file");
    std::vector<std::string> header = split_csv_line(raw);
    if (header.size() < 3 || header.front() != "id" || header.back() != "label")
        throw DataError(origin + ": header must be id, feature columns, label");
    const std::size_t f = header.size() - 2;

    std::vector<std::string> ids;
    std::vector<double> values;
    std::vector<int> classes;
    int line = 1;
    while (std::getline(in, raw)) {
        ++line;
        if (detail::trim(raw).empty()) continue;
        std::vector<std::string> fields = split_csv_line(raw);
        if (fields.size() != f + 2)
            throw DataError(origin + ":" + std::to_string(line) + ": expected " +
                            std::to_string(f + 2) + " fields, got " +
                            std::to_string(fields.size()));
        ids.push_back(fields[0]);
        for (std::size_t j = 0; j < f; ++j)
            values.push_back(parse_csv_double(fields[j + 1], origin, line));
        const std::string& lab = fields.back();
        if (lab == "normal") classes.push_back(0);
        else if (lab == "abnormal") classes.push_back(1);
        else
            throw DataError(origin + ":" + std::to_string(line) +
                            ": label must be normal or abnormal, got '" + lab + "'");
    }
    const std::size_t n = ids.size();
    if (n == 0) throw DataError(origin + ": no data rows");
    ClinicalTable t;
    t.ids = std::move(ids);
    t.features = Tensor::zeros({n, f});
    for (std::size_t i = 0; i < n * f; ++i) t.features.at(i) = values[i];
    t.labels = Tensor::zeros({n, 2});
    for (std::size_t i = 0; i < n; ++i) t.labels.at(i, classes[i] == 0 ? 0 : 1) = 1.0;
    return t;
}

// --- embeddings.csv: id + latent columns (precomputed image features) ---

inline void write_embeddings_csv(const fs::path& path, const std::vector<std::string>& ids,
                                 const Tensor& z) {
    if (z.ndim() != 2 || z.dim(0) != ids.size())
        throw ShapeError("write_embeddings_csv: embeddings must be [N x D] matching ids");
    std::string out = "id";
    for (std::size_t j = 0; j < z.dim(1); ++j) out += ",z" + std::to_string(j);
    out += "\n";
    for (std::size_t i = 0; i < ids.size(); ++i) {
        out += ids[i];
        for (std::size_t j = 0; j < z.dim(1); ++j) out += "," + format_double(z.at(i, j));
        out += "\n";
    }
    write_text_atomic(path, out);
}

struct EmbeddingTable {
    std::vector<std::string> ids;
    Tensor features;
};

inline EmbeddingTable read_embeddings_csv(const fs::path& path) {
    const std::string origin = path.string();
    std::istringstream in(read_text(path));
    std::string raw;
    if (!std::getline(in, raw)) throw DataError(origin + ": empty file");
    std::vector<std::string> header = split_csv_line(raw);
    if (header.size() < 2 || header.front() != "id")
        throw DataError(origin + ": header must be id followed by latent columns");
    const std::size_t d = header.size() - 1;
    std::vector<std::string> ids;
    std::vector<double> values;
    int line = 1;
    while (std::getline(in, raw)) {
        ++line;
        if (detail::trim(raw).empty()) continue;
        std::vector<std::string> fields = split_csv_line(raw);
        if (fields.size() != d + 1)
            throw DataError(origin + ":" + std::to_string(line) + ": expected " +
                            std::to_string(d + 1) + " fields, got " +
                            std::to_string(fields.size()));
        ids.push_back(fields[0]);
        for (std::size_t j = 0; j < d; ++j)
            values.push_back(parse_csv_double(fields[j + 1], origin, line));
    }
    if (ids.empty()) throw DataError(origin + ": no data rows");
    EmbeddingTable t;
    t.ids = std::move(ids);
    t.features = Tensor::zeros({t.ids.size(), d});
    for (std::size_t i = 0; i < values.size(); ++i) t.features.at(i) = values[i];
    return t;
}

// --- dataset bundle: clinical.csv + (images.bin | embeddings.csv) + manifest ---

inline void write_bundle(const fs::path& dir, const MultimodalDataset& data,
                         const SynthConfig* generator = nullptr) {
    fs::create_directories(dir);
    write_clinical_csv(dir / "clinical.csv", data);
    std::vector<std::pair<std::string, std::string>> kv;
    kv.emplace_back("format", "mmgf-bundle");
    kv.emplace_back("version", "1");
    kv.emplace_back("clinical", "clinical.csv");
    if (data.images.ndim() == 4) {
        write_images_bin(dir / "images.bin", data.images);
        kv.emplace_back("images", "images.bin");
    } else {
        write_embeddings_csv(dir / "embeddings.csv", data.ids, data.images);
        kv.emplace_back("embeddings", "embeddings.csv");
    }
    if (generator) {
        kv.emplace_back("n", std::to_string(generator->n));
        kv.emplace_back("image_size", std::to_string(generator->image_size));
        kv.emplace_back("n_clinical", std::to_string(generator->n_clinical));
        kv.emplace_back("separation", format_double(generator->separation));
        kv.emplace_back("label_noise", format_double(generator->label_noise));
        kv.emplace_back("seed", std::to_string(generator->seed));
    }
    write_text_atomic(dir / "manifest.toml", render_kv(kv));
}

inline MultimodalDataset load_bundle(const fs::path& dir) {
    const fs::path manifest_path = dir / "manifest.toml";
    const std::string origin = manifest_path.string();
    std::string clinical_file, images_file, embeddings_file;
    for (const KvEntry& e : parse_kv_text(read_text(manifest_path), origin)) {
        if (e.key == "clinical") clinical_file = e.value;
        else if (e.key == "images") images_file = e.value;
        else if (e.key == "embeddings") embeddings_file = e.value;
        else if (e.key == "format" && e.value != "mmgf-bundle")
            throw DataError(origin + ": not a dataset bundle manifest");
    }
    if (clinical_file.empty()) throw ConfigError(origin + ": missing key 'clinical'");
    if (images_file.empty() == embeddings_file.empty())
        throw ConfigError(origin + ": exactly one of 'images' or 'embeddings' is required");

    ClinicalTable table = read_clinical_csv(dir / clinical_file);
    MultimodalDataset data;
    data.ids = table.ids;
    data.clinical = table.features;
    data.labels = table.labels;
    if (!images_file.empty()) {
        data.images = read_images_bin(dir / images_file);
        if (data.images.dim(0) != data.ids.size())
            throw DataError(origin + ": image count " + std::to_string(data.images.dim(0)) +
                            " does not match clinical row count " +
                            std::to_string(data.ids.size()));
    } else {
        EmbeddingTable emb = read_embeddings_csv(dir / embeddings_file);
        if (emb.ids != data.ids)
            throw DataError(origin + ": embeddings.csv ids do not match clinical.csv ids");
        data.images = emb.features;
    }
    return data;
}

// --- JSON checkpoint ---

inline njson tensor_to_json(const Tensor& t) {
    njson j;
    j["shape"] = t.shape();
    std::vector<double> vals(t.numel());
    for (std::size_t i = 0; i < t.numel(); ++i) vals[i] = t.at(i);
    j["values"] = vals;
    j["requires_grad"] = t.requires_grad();
    return j;
}

inline Tensor tensor_from_json(const njson& j) {
    Shape shape = j.at("shape").get<Shape>();
    std::vector<double> vals = j.at("values").get<std::vector<double>>();
    if (shape_numel(shape) != vals.size())
        throw DataError("checkpoint tensor: shape does not match value count");
    Tensor t = Tensor::zeros(shape);
    for (std::size_t i = 0; i < vals.size(); ++i) t.at(i) = vals[i];
    t.set_requires_grad(j.value("requires_grad", false));
    return t;
}

inline njson config_to_json(const TrainConfig& cfg) {
    njson j;
    j["epochs"] = cfg.epochs;
    j["lr"] = cfg.lr;
    j["knn_k"] = cfg.knn_k;
    j["metric"] = metric_name(cfg.metric);
    j["gnn"] = gnn_kind_name(cfg.gnn);
    j["heads"] = cfg.heads;
    j["gnn_layers"] = cfg.gnn_layers;
    j["hidden"] = cfg.hidden;
    j["embed_dim"] = cfg.embed_dim;
    j["fuse_dim"] = cfg.fuse_dim;
    j["delta"] = cfg.delta;
    j["beta"] = cfg.beta;
    j["seed"] = cfg.seed;
    j["folds"] = cfg.folds;
    j["normalize_similarity"] = cfg.normalize_similarity;
    j["leaky_slope"] = cfg.leaky_slope;
    j["diag_reference"] = diag_reference_name(cfg.diag_reference);
    j["protocol"] = protocol_name(cfg.protocol);
    j["fixed_train_size"] = cfg.fixed_train_size;
    j["encoder"] = encoder_kind_name(cfg.encoder.kind);
    j["latent_dim"] = cfg.encoder.latent_dim;
    j["conv_channels1"] = cfg.encoder.conv_c1;
    j["conv_channels2"] = cfg.encoder.conv_c2;
    j["conv_kernel"] = cfg.encoder.conv_kernel;
    j["conv_stride"] = cfg.encoder.conv_stride;
    j["pretrain_epochs"] = cfg.encoder.pretrain_epochs;
    j["pretrain_lr"] = cfg.encoder.pretrain_lr;
    j["encoder_activation"] = cfg.encoder.activation == Activation::elu ? "elu" : "identity";
    return j;
}

inline TrainConfig config_from_json(const njson& j) {
    TrainConfig cfg;
    std::string text;
    for (const auto& [key, value] : j.items()) {
        if (value.is_string()) text += key + " = " + value.get<std::string>() + "\n";
        else if (value.is_boolean()) text += key + std::string(" = ") +
                                             (value.get<bool>() ? "true" : "false") + "\n";
        else
            text += key + " = " + value.dump() + "\n";
    }
    return parse_run_config_text(text, "checkpoint config");
}

inline njson encoder_to_json(const EncoderParams& p) {
    njson j;
    j["kind"] = encoder_kind_name(p.cfg.kind);
    j["activation"] = p.cfg.activation == Activation::elu ? "elu" : "identity";
    j["latent_dim"] = p.cfg.latent_dim;
    j["conv_channels1"] = p.cfg.conv_c1;
    j["conv_channels2"] = p.cfg.conv_c2;
    j["conv_kernel"] = p.cfg.conv_kernel;
    j["conv_stride"] = p.cfg.conv_stride;
    j["pretrain_epochs"] = p.cfg.pretrain_epochs;
    j["pretrain_lr"] = p.cfg.pretrain_lr;
    j["in_h"] = p.in_h;
    j["in_w"] = p.in_w;
    j["flat_in"] = p.flat_in;
    j["h1"] = p.h1;
    j["w1"] = p.w1;
    j["h2"] = p.h2;
    j["w2"] = p.w2;
    njson tensors = njson::object();
    const std::pair<const char*, const Tensor*> slots[] = {
        {"enc_k1", &p.enc_k1}, {"enc_b1", &p.enc_b1}, {"enc_k2", &p.enc_k2},
        {"enc_b2", &p.enc_b2}, {"enc_w", &p.enc_w},   {"enc_b", &p.enc_b},
        {"dec_w", &p.dec_w},   {"dec_b", &p.dec_b},   {"dec_k1", &p.dec_k1},
        {"dec_b1", &p.dec_b1}, {"dec_k2", &p.dec_k2}, {"dec_b2", &p.dec_b2}};
    for (const auto& [name, t] : slots)
        if (t->defined()) tensors[name] = tensor_to_json(*t);
    j["tensors"] = tensors;
    return j;
}

inline EncoderParams encoder_from_json(const njson& j) {
    EncoderParams p;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "identity") p.cfg.kind = EncoderKind::identity;
    else if (kind == "dense") p.cfg.kind = EncoderKind::dense;
    else if (kind == "conv") p.cfg.kind = EncoderKind::conv;
    else
        throw DataError("checkpoint: unknown encoder kind '" + kind + "'");
    p.cfg.activation = j.at("activation").get<std::string>() == "identity"
                           ? Activation::identity
                           : Activation::elu;
    p.cfg.latent_dim = j.at("latent_dim").get<std::size_t>();
    p.cfg.conv_c1 = j.at("conv_channels1").get<std::size_t>();
    p.cfg.conv_c2 = j.at("conv_channels2").get<std::size_t>();
    p.cfg.conv_kernel = j.at("conv_kernel").get<std::size_t>();
    p.cfg.conv_stride = j.at("conv_stride").get<std::size_t>();
    p.cfg.pretrain_epochs = j.at("pretrain_epochs").get<std::size_t>();
    p.cfg.pretrain_lr = j.at("pretrain_lr").get<double>();
    p.in_h = j.at("in_h").get<std::size_t>();
    p.in_w = j.at("in_w").get<std::size_t>();
    p.flat_in = j.at("flat_in").get<std::size_t>();
    p.h1 = j.at("h1").get<std::size_t>();
    p.w1 = j.at("w1").get<std::size_t>();
    p.h2 = j.at("h2").get<std::size_t>();
    p.w2 = j.at("w2").get<std::size_t>();
    const njson& tensors = j.at("tensors");
    const std::pair<const char*, Tensor*> slots[] = {
        {"enc_k1", &p.enc_k1}, {"enc_b1", &p.enc_b1}, {"enc_k2", &p.enc_k2},
        {"enc_b2", &p.enc_b2}, {"enc_w", &p.enc_w},   {"enc_b", &p.enc_b},
        {"dec_w", &p.dec_w},   {"dec_b", &p.dec_b},   {"dec_k1", &p.dec_k1},
        {"dec_b1", &p.dec_b1}, {"dec_k2", &p.dec_k2}, {"dec_b2", &p.dec_b2}};
    for (const auto& [name, t] : slots)
        if (tensors.contains(name)) *t = tensor_from_json(tensors.at(name));
    return p;
}

inline njson gnn_to_json(const GnnStackParams& p) {
    njson j;
    j["kind"] = gnn_kind_name(p.kind);
    njson layers = njson::array();
    if (p.kind == GnnKind::gat) {
        for (const GatLayerParams& layer : p.gat_layers) {
            njson lj;
            lj["leaky_slope"] = layer.leaky_slope;
            njson heads = njson::array();
            for (const GatHeadParams& head : layer.heads) {
                njson hj;
                hj["W"] = tensor_to_json(head.W);
                hj["attn"] = tensor_to_json(head.attn);
                heads.push_back(hj);
            }
            lj["heads"] = heads;
            layers.push_back(lj);
        }
    } else {
        for (const GcnLayerParams& layer : p.gcn_layers) {
            njson lj;
            lj["W"] = tensor_to_json(layer.W);
            layers.push_back(lj);
        }
    }
    j["layers"] = layers;
    return j;
}

inline GnnStackParams gnn_from_json(const njson& j) {
    GnnStackParams p;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "gat") p.kind = GnnKind::gat;
    else if (kind == "gcn") p.kind = GnnKind::gcn;
    else
        throw DataError("checkpoint: unknown gnn kind '" + kind + "'");
    for (const njson& lj : j.at("layers")) {
        if (p.kind == GnnKind::gat) {
            GatLayerParams layer;
            layer.leaky_slope = lj.at("leaky_slope").get<double>();
            for (const njson& hj : lj.at("heads")) {
                GatHeadParams head;
                head.W = tensor_from_json(hj.at("W"));
                head.attn = tensor_from_json(hj.at("attn"));
                layer.heads.push_back(head);
            }
            p.gat_layers.push_back(layer);
        } else {
            GcnLayerParams layer;
            layer.W = tensor_from_json(lj.at("W"));
            p.gcn_layers.push_back(layer);
        }
    }
    return p;
}

inline njson fusion_to_json(const FusionParams& p) {
    njson j;
    j["W_m"] = tensor_to_json(p.W_m);
    j["W_f"] = tensor_to_json(p.W_f);
    j["head_m"] = tensor_to_json(p.head_m);
    j["head_f"] = tensor_to_json(p.head_f);
    j["delta"] = p.delta;
    j["beta"] = p.beta;
    return j;
}

inline FusionParams fusion_from_json(const njson& j) {
    FusionParams p;
    p.W_m = tensor_from_json(j.at("W_m"));
    p.W_f = tensor_from_json(j.at("W_f"));
    p.head_m = tensor_from_json(j.at("head_m"));
    p.head_f = tensor_from_json(j.at("head_f"));
    p.delta = j.at("delta").get<double>();
    p.beta = j.at("beta").get<double>();
    return p;
}

inline njson scaler_to_json(const Scaler& s) {
    njson j;
    j["mean"] = s.mean;
    j["stdev"] = s.stdev;
    return j;
}

inline Scaler scaler_from_json(const njson& j) {
    Scaler s;
    s.mean = j.at("mean").get<std::vector<double>>();
    s.stdev = j.at("stdev").get<std::vector<double>>();
    if (s.mean.size() != s.stdev.size())
        throw DataError("checkpoint scaler: mean and stdev lengths differ");
    return s;
}

struct Checkpoint {
    TrainConfig config;
    EncoderParams encoder;
    std::vector<double> pretrain_loss;
    std::vector<ModelState> folds;
};

inline void write_checkpoint(const fs::path& path, const Checkpoint& cp) {
    njson j;
    j["format"] = "mmgf-checkpoint";
    j["version"] = 1;
    j["config"] = config_to_json(cp.config);
    j["encoder"] = encoder_to_json(cp.encoder);
    j["pretrain_loss"] = cp.pretrain_loss;
    njson folds = njson::array();
    for (const ModelState& m : cp.folds) {
        njson fj;
        fj["scaler_m"] = scaler_to_json(m.scaler_m);
        fj["scaler_f"] = scaler_to_json(m.scaler_f);
        fj["train_mask"] = m.train_mask;
        fj["gnn_m"] = gnn_to_json(m.params.gnn_m);
        fj["gnn_f"] = gnn_to_json(m.params.gnn_f);
        fj["fusion"] = fusion_to_json(m.params.fusion);
        folds.push_back(fj);
    }
    j["folds"] = folds;
    write_text_atomic(path, j.dump() + "\n");
}

inline Checkpoint read_checkpoint(const fs::path& path) {
    njson j;
    try {
        j = njson::parse(read_text(path));
    } catch (const njson::parse_error& e) {
        throw DataError(path.string() + ": not valid JSON: " + e.what());
    }
    try {
        if (j.at("format").get<std::string>() != "mmgf-checkpoint")
            throw DataError(path.string() + ": not a model checkpoint");
        if (j.at("version").get<int>() != 1)
            throw DataError(path.string() + ": unsupported checkpoint version");
        Checkpoint cp;
        cp.config = config_from_json(j.at("config"));
        cp.encoder = encoder_from_json(j.at("encoder"));
        cp.pretrain_loss = j.at("pretrain_loss").get<std::vector<double>>();
        for (const njson& fj : j.at("folds")) {
            ModelState m;
            m.scaler_m = scaler_from_json(fj.at("scaler_m"));
            m.scaler_f = scaler_from_json(fj.at("scaler_f"));
            m.train_mask = fj.at("train_mask").get<std::vector<std::uint8_t>>();
            m.params.gnn_m = gnn_from_json(fj.at("gnn_m"));
            m.params.gnn_f = gnn_from_json(fj.at("gnn_f"));
            m.params.fusion = fusion_from_json(fj.at("fusion"));
            cp.folds.push_back(std::move(m));
        }
        return cp;
    } catch (const njson::exception& e) {
        throw DataError(path.string() + ": malformed checkpoint: " + e.what());
    }
}

// --- report rendering ---

inline njson report_to_json(const MetricsReport& r) {
    njson j;
    j["accuracy"] = r.accuracy;
    j["confusion"] = r.confusion;
    njson per_class = njson::array();
    for (const ClassMetrics& c : r.per_class) {
        njson cj;
        cj["f1"] = c.f1;
        cj["sensitivity"] = c.sensitivity;
        cj["precision"] = c.precision;
        cj["zero_denominator"] = c.zero_denominator;
        per_class.push_back(cj);
    }
    j["per_class"] = per_class;
    j["auc_defined"] = r.auc_defined;
    if (r.auc_defined) j["auc"] = r.auc;
    return j;
}

inline std::string metrics_json_text(const CvResult& cv, const TrainConfig& cfg) {
    njson j;
    j["protocol"] = protocol_name(cfg.protocol);
    j["seed"] = cfg.seed;
    j["pooled"] = report_to_json(cv.pooled);
    njson folds = njson::array();
    std::vector<double> accs;
    for (const FoldResult& fr : cv.folds) {
        njson fj = report_to_json(fr.report);
        fj["test_size"] = fr.test_indices.size();
        folds.push_back(fj);
        accs.push_back(fr.report.accuracy);
    }
    j["folds"] = folds;
    j["fold_accuracy_mean"] = mean_of(accs);
    j["fold_accuracy_std"] = std_of(accs);
    j["fold_auc_mean"] = cv.fold_auc_mean;
    j["fold_auc_std"] = cv.fold_auc_std;
    return j.dump(2) + "\n";
}

inline std::string loss_history_csv(const std::vector<EpochLosses>& history) {
    std::string out = "epoch,L_m,L_f,L_pos,L_neg,L_diag,total\n";
    for (std::size_t i = 0; i < history.size(); ++i) {
        const EpochLosses& e = history[i];
        out += std::to_string(i) + "," + format_double(e.ce_image) + "," +
               format_double(e.ce_clinical) + "," + format_double(e.pos) + "," +
               format_double(e.neg) + "," + format_double(e.diag) + "," +
               format_double(e.total) + "\n";
    }
    return out;
}

// The first curve point is reachable by any threshold above every score; it
// is written as max_score + 1 so the file holds only finite numbers.
inline std::string roc_csv(const std::vector<RocPoint>& points) {
    std::string out = "fpr,tpr,threshold\n";
    double max_finite = 0.0;
    bool have_finite = false;
    for (const RocPoint& p : points)
        if (std::isfinite(p.threshold) && (!have_finite || p.threshold > max_finite)) {
            max_finite = p.threshold;
            have_finite = true;
        }
    for (const RocPoint& p : points) {
        const double t = std::isfinite(p.threshold) ? p.threshold
                                                    : (have_finite ? max_finite + 1.0 : 1.0);
        out += format_double(p.fpr) + "," + format_double(p.tpr) + "," + format_double(t) + "\n";
    }
    return out;
}

inline std::string similarity_csv(const Tensor& s) {
    if (s.ndim() != 2) throw ShapeError("similarity_csv: expected a matrix");
    std::string out;
    for (std::size_t i = 0; i < s.dim(0); ++i) {
        for (std::size_t j = 0; j < s.dim(1); ++j) {
            if (j) out += ",";
            out += format_double(s.at(i, j));
        }
        out += "\n";
    }
    return out;
}

inline std::string fused_embeddings_csv(const std::vector<std::string>& ids,
                                        const Tensor& labels, const Tensor& z) {
    std::string out = "id,label";
    for (std::size_t j = 0; j < z.dim(1); ++j) out += ",z" + std::to_string(j);
    out += "\n";
    for (std::size_t i = 0; i < z.dim(0); ++i) {
        out += ids[i];
        out += ",";
        out += label_name(labels.at(i, 1) == 1.0);
        for (std::size_t j = 0; j < z.dim(1); ++j) out += "," + format_double(z.at(i, j));
        out += "\n";
    }
    return out;
}

}  // namespace mmgf::io
