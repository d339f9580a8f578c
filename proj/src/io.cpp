#include "ptlab/io.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>
#include <system_error>

#include "ptlab/errors.hpp"

namespace ptlab::io {

namespace {

[[noreturn]] void bad(const std::string& what) { throw Error(ErrorKind::InvalidInput, what); }

const Json& field(const Json& j, const char* key) {
    if (!j.is_object() || !j.contains(key)) bad(std::string("missing field '") + key + "'");
    return j.at(key);
}

std::size_t size_field(const Json& j, const char* key) {
    const Json& v = field(j, key);
    if (!v.is_number_integer() || v.get<long long>() < 0) bad(std::string("field '") + key + "' must be a non-negative integer");
    return v.get<std::size_t>();
}

std::vector<double> numbers(const Json& j) {
    if (!j.is_array()) bad("expected an array of numbers");
    std::vector<double> out;
    out.reserve(j.size());
    for (const auto& v : j) out.push_back(number_from_json(v));
    return out;
}

}  // namespace

Json number_to_json(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

double number_from_json(const Json& j) {
    if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
    if (!j.is_number()) bad("expected a number");
    return j.get<double>();
}

Json matrix_to_json(const Matrix& m) {
    Json rows = Json::array();
    for (std::size_t r = 0; r < m.rows(); ++r) {
        Json row = Json::array();
        for (double v : m.row(r)) row.push_back(number_to_json(v));
        rows.push_back(std::move(row));
    }
    return rows;
}

Matrix matrix_from_json(const Json& j) {
    if (!j.is_array()) bad("matrix must be an array of rows");
    const std::size_t rows = j.size();
    const std::size_t cols = rows == 0 ? 0 : j.front().size();
    Matrix m(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        const auto row = numbers(j[r]);
        if (row.size() != cols) bad("matrix rows have different lengths");
        for (std::size_t c = 0; c < cols; ++c) m(r, c) = row[c];
    }
    return m;
}

Vector vector_from_json(const Json& j) { return numbers(j); }

Json layer_to_json(const TransformerLayerWeights& layer) {
    Json heads = Json::array();
    for (const auto& h : layer.heads)
        heads.push_back({{"W_q", matrix_to_json(h.W_q)},
                         {"W_k", matrix_to_json(h.W_k)},
                         {"W_v", matrix_to_json(h.W_v)},
                         {"W_o", matrix_to_json(h.W_o)}});
    return {{"heads", heads},
            {"mlp",
             {{"W_1", matrix_to_json(layer.mlp.W_1)},
              {"b_1", layer.mlp.b_1},
              {"W_2", matrix_to_json(layer.mlp.W_2)},
              {"b_2", layer.mlp.b_2}}}};
}

TransformerLayerWeights layer_from_json(const Json& j) {
    TransformerLayerWeights layer;
    const Json& heads = field(j, "heads");
    if (!heads.is_array()) bad("'heads' must be an array");
    for (const auto& h : heads)
        layer.heads.push_back({matrix_from_json(field(h, "W_q")), matrix_from_json(field(h, "W_k")),
                               matrix_from_json(field(h, "W_v")), matrix_from_json(field(h, "W_o"))});
    const Json& mlp = field(j, "mlp");
    layer.mlp = {matrix_from_json(field(mlp, "W_1")), numbers(field(mlp, "b_1")), matrix_from_json(field(mlp, "W_2")),
                 numbers(field(mlp, "b_2"))};
    layer.validate();
    return layer;
}

Json stack_to_json(const TransformerStack& stack) {
    require(!stack.layers.empty(), ErrorKind::InvalidInput, "cannot serialize an empty stack");
    if (stack.layers.size() == 1) {
        Json j = layer_to_json(stack.layers.front());
        j["d"] = stack.d();
        return j;
    }
    Json layers = Json::array();
    for (const auto& l : stack.layers) layers.push_back(layer_to_json(l));
    return {{"d", stack.d()}, {"layers", layers}};
}

TransformerStack stack_from_json(const Json& j) {
    TransformerStack st;
    if (j.is_object() && j.contains("layers")) {
        for (const auto& l : j.at("layers")) st.layers.push_back(layer_from_json(l));
    } else {
        st.layers.push_back(layer_from_json(j));
    }
    if (st.layers.empty()) bad("weights file has no layers");
    if (j.contains("d") && size_field(j, "d") != st.d()) bad("declared d does not match the weights");
    st.validate();
    return st;
}

Json dataset_to_json(const SeqDataset& ds, const Json& metadata) {
    Json examples = Json::array();
    for (const auto& ex : ds.examples) examples.push_back({{"X", matrix_to_json(ex.X)}, {"Y", matrix_to_json(ex.Y)}});
    Json j = {{"d", ds.d()}, {"m", ds.m()}, {"loss_mask", ds.loss_mask}, {"examples", examples}};
    if (!metadata.is_null()) j["metadata"] = metadata;
    return j;
}

SeqDataset dataset_from_json(const Json& j) {
    SeqDataset ds;
    const Json& examples = field(j, "examples");
    if (!examples.is_array()) bad("'examples' must be an array");
    for (const auto& ex : examples) ds.examples.push_back({matrix_from_json(field(ex, "X")), matrix_from_json(field(ex, "Y"))});
    const Json& mask = field(j, "loss_mask");
    if (!mask.is_array()) bad("'loss_mask' must be an array");
    for (const auto& v : mask) {
        if (!v.is_number_integer() || v.get<long long>() < 0) bad("loss_mask entries must be non-negative integers");
        ds.loss_mask.push_back(v.get<std::size_t>());
    }
    ds.validate();
    if (size_field(j, "d") != ds.d() || size_field(j, "m") != ds.m()) bad("declared d or m does not match the examples");
    return ds;
}

Json constants_to_json(const CompactnessConstants& c) {
    Json D = Json::array();
    for (double v : c.D_per_layer) D.push_back(number_to_json(v));
    return {{"D_per_layer", D},           {"D_X", number_to_json(c.D_X)},     {"D_P", number_to_json(c.D_P)},
            {"alpha", number_to_json(c.alpha)}, {"beta", number_to_json(c.beta)}, {"m", c.m},
            {"sample_size", c.sample_size}};
}

CompactnessConstants constants_from_json(const Json& j) {
    CompactnessConstants c;
    c.D_per_layer = numbers(field(j, "D_per_layer"));
    c.D_X = number_from_json(field(j, "D_X"));
    c.D_P = number_from_json(field(j, "D_P"));
    c.alpha = number_from_json(field(j, "alpha"));
    c.beta = number_from_json(field(j, "beta"));
    c.m = size_field(j, "m");
    c.sample_size = size_field(j, "sample_size");
    return c;
}

Json report_to_json(const LipschitzReport& r) {
    Json heads = Json::array();
    for (double v : r.per_head_bounds) heads.push_back(number_to_json(v));
    return {{"per_head_bounds", heads},
            {"block_bound", number_to_json(r.block_bound)},
            {"mlp_bound", number_to_json(r.mlp_bound)},
            {"layer_bound", number_to_json(r.layer_bound)},
            {"constants_used", constants_to_json(r.constants_used)}};
}

LipschitzReport report_from_json(const Json& j) {
    LipschitzReport r;
    r.per_head_bounds = numbers(field(j, "per_head_bounds"));
    r.block_bound = number_from_json(field(j, "block_bound"));
    r.mlp_bound = number_from_json(field(j, "mlp_bound"));
    r.layer_bound = number_from_json(field(j, "layer_bound"));
    r.constants_used = constants_from_json(field(j, "constants_used"));
    return r;
}

Json certificate_to_json(const InvertibilityCertificate& c) {
    Json att = Json::array(), mlp = Json::array();
    for (double v : c.per_layer_attention_bound) att.push_back(number_to_json(v));
    for (double v : c.per_layer_mlp_bound) mlp.push_back(number_to_json(v));
    return {{"per_layer_attention_bound", att}, {"per_layer_mlp_bound", mlp},
            {"certified", c.certified},         {"margin", number_to_json(c.margin)},
            {"constants_used", constants_to_json(c.constants_used)}};
}

InvertibilityCertificate invertibility_certificate_from_json(const Json& j) {
    InvertibilityCertificate c;
    c.per_layer_attention_bound = numbers(field(j, "per_layer_attention_bound"));
    c.per_layer_mlp_bound = numbers(field(j, "per_layer_mlp_bound"));
    const Json& cert = field(j, "certified");
    if (!cert.is_boolean()) bad("'certified' must be a boolean");
    c.certified = cert.get<bool>();
    c.margin = number_from_json(field(j, "margin"));
    c.constants_used = constants_from_json(field(j, "constants_used"));
    return c;
}

Json certificate_to_json(const UnlearnableCertificate& c) {
    return {{"c1", c.c1},
            {"c2", c.c2},
            {"angle_residuals", {c.angle_residuals[0], c.angle_residuals[1]}},
            {"cone_margin", number_to_json(c.cone_margin)},
            {"mlp_inverses", {{"a", c.a}, {"b", c.b}}},
            {"attempts", c.attempts}};
}

UnlearnableCertificate unlearnable_certificate_from_json(const Json& j) {
    UnlearnableCertificate c;
    c.c1 = numbers(field(j, "c1"));
    c.c2 = numbers(field(j, "c2"));
    const auto res = numbers(field(j, "angle_residuals"));
    if (res.size() != 2) bad("'angle_residuals' must hold two values");
    c.angle_residuals = {res[0], res[1]};
    c.cone_margin = number_from_json(field(j, "cone_margin"));
    const Json& inv = field(j, "mlp_inverses");
    c.a = numbers(field(inv, "a"));
    c.b = numbers(field(inv, "b"));
    c.attempts = size_field(j, "attempts");
    return c;
}

Json lora_update_to_json(const LoraUpdate& u) {
    return {{"W1_left", matrix_to_json(u.W1_left)},
            {"W1_right", matrix_to_json(u.W1_right)},
            {"W2_left", matrix_to_json(u.W2_left)},
            {"W2_right", matrix_to_json(u.W2_right)},
            {"delta_b1", u.delta_b1},
            {"parameter_count", u.parameter_count},
            {"direction", u.direction},
            {"order", u.order},
            {"projections", u.projections},
            {"thresholds", u.thresholds},
            {"triangular_residual", number_to_json(u.triangular_residual)}};
}

LoraUpdate lora_update_from_json(const Json& j) {
    LoraUpdate u;
    u.W1_left = matrix_from_json(field(j, "W1_left"));
    u.W1_right = matrix_from_json(field(j, "W1_right"));
    u.W2_left = matrix_from_json(field(j, "W2_left"));
    u.W2_right = matrix_from_json(field(j, "W2_right"));
    u.delta_b1 = numbers(field(j, "delta_b1"));
    u.parameter_count = size_field(j, "parameter_count");
    u.direction = numbers(field(j, "direction"));
    for (const auto& v : field(j, "order")) u.order.push_back(v.get<std::size_t>());
    u.projections = numbers(field(j, "projections"));
    u.thresholds = numbers(field(j, "thresholds"));
    u.triangular_residual = number_from_json(field(j, "triangular_residual"));
    return u;
}

Json sweep_to_json(const std::vector<SweepRow>& rows) {
    Json out = Json::array();
    for (const auto& r : rows) {
        Json losses = Json::array();
        for (double v : r.final_losses) losses.push_back(number_to_json(v));
        out.push_back({{"prompt_length", r.prompt_length},
                       {"mean_mse", number_to_json(r.mean_mse)},
                       {"std_mse", number_to_json(r.std_mse)},
                       {"n_diverged", r.n_diverged},
                       {"final_losses", losses}});
    }
    return out;
}

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

namespace {

std::vector<std::vector<std::string>> csv_rows(std::string_view text, std::string_view header) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in{std::string(text)};
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (first) {
            if (line != header) bad("unexpected CSV header '" + line + "'");
            first = false;
            continue;
        }
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::size_t start = 0;
        for (;;) {
            const std::size_t comma = line.find(',', start);
            cells.push_back(line.substr(start, comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        rows.push_back(std::move(cells));
    }
    if (first) bad("CSV is empty");
    return rows;
}

double parse_double(const std::string& s) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size()) bad("invalid number '" + s + "' in CSV");
    return v;
}

std::size_t parse_size(const std::string& s) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
    if (s.empty() || s.front() == '-' || end != s.c_str() + s.size()) bad("invalid integer '" + s + "' in CSV");
    return static_cast<std::size_t>(v);
}

constexpr std::string_view kTrainHeader = "step,loss,prompt_spectral_norm";
constexpr std::string_view kSweepHeader = "prompt_length,mean_mse,std_mse,n_diverged";

}  // namespace

std::string train_log_csv(const TrainRecord& rec) {
    std::string out(kTrainHeader);
    out += '\n';
    const bool norms = rec.prompt_spectral_norm_history.size() == rec.loss_history.size();
    for (std::size_t i = 0; i < rec.loss_history.size(); ++i) {
        out += std::to_string(rec.loss_history[i].first) + ',' + format_double(rec.loss_history[i].second) + ',';
        if (norms && !rec.prompt_spectral_norm_history.empty()) out += format_double(rec.prompt_spectral_norm_history[i].second);
        out += '\n';
    }
    return out;
}

std::vector<TrainLogRow> parse_train_log_csv(std::string_view text) {
    std::vector<TrainLogRow> out;
    for (const auto& cells : csv_rows(text, kTrainHeader)) {
        if (cells.size() != 3) bad("training log rows need three fields");
        TrainLogRow row;
        row.step = parse_size(cells[0]);
        row.loss = parse_double(cells[1]);
        row.has_norm = !cells[2].empty();
        if (row.has_norm) row.prompt_spectral_norm = parse_double(cells[2]);
        out.push_back(row);
    }
    return out;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::string out(kSweepHeader);
    out += '\n';
    for (const auto& r : rows)
        out += std::to_string(r.prompt_length) + ',' + format_double(r.mean_mse) + ',' + format_double(r.std_mse) + ',' +
               std::to_string(r.n_diverged) + '\n';
    return out;
}

std::vector<SweepRow> parse_sweep_csv(std::string_view text) {
    std::vector<SweepRow> out;
    for (const auto& cells : csv_rows(text, kSweepHeader)) {
        if (cells.size() != 4) bad("sweep rows need four fields");
        SweepRow row;
        row.prompt_length = parse_size(cells[0]);
        row.mean_mse = parse_double(cells[1]);
        row.std_mse = parse_double(cells[2]);
        row.n_diverged = parse_size(cells[3]);
        out.push_back(std::move(row));
    }
    return out;
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) bad("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Json read_json(const std::filesystem::path& path) {
    try {
        return Json::parse(read_text(path));
    } catch (const Json::exception& e) {
        bad("'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

void write_atomic(const std::filesystem::path& path, std::string_view content) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) bad("cannot write '" + tmp.string() + "'");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) bad("write to '" + tmp.string() + "' failed");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        bad("cannot move output into place at '" + path.string() + "'");
    }
}

void write_json(const std::filesystem::path& path, const Json& j) { write_atomic(path, j.dump(2) + "\n"); }

std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw Error(ErrorKind::InvalidInput, "SHA-256 computation failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 0xF];
    }
    return out;
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_text(path)); }

Json manifest_to_json(const RunManifest& m) {
    auto files = [](const std::vector<std::pair<std::string, std::string>>& v) {
        Json a = Json::array();
        for (const auto& [p, h] : v) a.push_back({{"path", p}, {"sha256", h}});
        return a;
    };
    return {{"command", m.command},        {"seed", m.seed},       {"inputs", files(m.inputs)},
            {"outputs", files(m.outputs)}, {"version", m.version}, {"wall_time_seconds", m.wall_time_seconds}};
}

RunManifest manifest_from_json(const Json& j) {
    RunManifest m;
    m.command = field(j, "command").get<std::string>();
    m.seed = field(j, "seed").get<std::uint64_t>();
    for (const auto& f : field(j, "inputs")) m.inputs.emplace_back(f.at("path"), f.at("sha256"));
    for (const auto& f : field(j, "outputs")) m.outputs.emplace_back(f.at("path"), f.at("sha256"));
    m.version = field(j, "version").get<std::string>();
    m.wall_time_seconds = field(j, "wall_time_seconds").get<double>();
    return m;
}

std::filesystem::path manifest_path(const std::filesystem::path& output) {
    std::filesystem::path p = output;
    p += ".manifest.json";
    return p;
}

}  // namespace ptlab::io
