#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ptlab/constructions.hpp"
#include "ptlab/dataset.hpp"
#include "ptlab/inversion.hpp"
#include "ptlab/lipschitz.hpp"
#include "ptlab/transformer.hpp"
#include "ptlab/tuning.hpp"

namespace ptlab::io {

using Json = nlohmann::json;

inline constexpr std::string_view kArtifactVersion = "0.1.0";

// Matrices are row-major nested arrays. A d x 0 matrix is d empty rows.
Json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const Json& j);
Vector vector_from_json(const Json& j);

// Non-finite doubles are written as null and read back as NaN.
Json number_to_json(double v);
double number_from_json(const Json& j);

Json layer_to_json(const TransformerLayerWeights& layer);
TransformerLayerWeights layer_from_json(const Json& j);

/// A single layer is written as {"d", "heads", "mlp"}; deeper stacks as
/// {"d", "layers": [...]}. Both forms are accepted on input.
Json stack_to_json(const TransformerStack& stack);
TransformerStack stack_from_json(const Json& j);

/// metadata, when not null, is stored under "metadata" and ignored on input.
Json dataset_to_json(const SeqDataset& ds, const Json& metadata = nullptr);
SeqDataset dataset_from_json(const Json& j);

Json constants_to_json(const CompactnessConstants& c);
CompactnessConstants constants_from_json(const Json& j);

Json report_to_json(const LipschitzReport& r);
LipschitzReport report_from_json(const Json& j);

Json certificate_to_json(const InvertibilityCertificate& c);
InvertibilityCertificate invertibility_certificate_from_json(const Json& j);

Json certificate_to_json(const UnlearnableCertificate& c);
UnlearnableCertificate unlearnable_certificate_from_json(const Json& j);

Json lora_update_to_json(const LoraUpdate& u);
LoraUpdate lora_update_from_json(const Json& j);

Json sweep_to_json(const std::vector<SweepRow>& rows);

/// step,loss,prompt_spectral_norm; the norm field is empty for non-prompt methods.
std::string train_log_csv(const TrainRecord& rec);

struct TrainLogRow {
    std::size_t step = 0;
    double loss = 0.0;
    bool has_norm = false;
    double prompt_spectral_norm = 0.0;
};
std::vector<TrainLogRow> parse_train_log_csv(std::string_view text);

/// prompt_length,mean_mse,std_mse,n_diverged
std::string sweep_csv(const std::vector<SweepRow>& rows);
std::vector<SweepRow> parse_sweep_csv(std::string_view text);

/// Shortest decimal form that reads back to the same double.
std::string format_double(double v);

std::string read_text(const std::filesystem::path& path);
Json read_json(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it over the target.
void write_atomic(const std::filesystem::path& path, std::string_view content);
void write_json(const std::filesystem::path& path, const Json& j);

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

struct RunManifest {
    std::string command;
    std::uint64_t seed = 0;
    std::vector<std::pair<std::string, std::string>> inputs;   // path, sha256
    std::vector<std::pair<std::string, std::string>> outputs;  // path, sha256
    std::string version = std::string(kArtifactVersion);
    double wall_time_seconds = 0.0;
};

Json manifest_to_json(const RunManifest& m);
RunManifest manifest_from_json(const Json& j);

/// <output>.manifest.json
std::filesystem::path manifest_path(const std::filesystem::path& output);

}  // namespace ptlab::io
