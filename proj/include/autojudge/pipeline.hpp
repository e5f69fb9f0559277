#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "autojudge/backends.hpp"
#include "autojudge/collection.hpp"
#include "autojudge/grading.hpp"
#include "autojudge/metaeval.hpp"
#include "autojudge/metrics.hpp"
#include "autojudge/scoring.hpp"

namespace autojudge::pipeline {

namespace fs = std::filesystem;

/// Everything one experiment needs. Relative paths in a config file resolve
/// against the file's directory.
struct PipelineConfig {
  fs::path topics;
  fs::path corpus;
  fs::path runs_dir;
  fs::path reference_qrels;
  fs::path run_manifest;     // optional
  fs::path prompt_template;  // optional; the built-in template otherwise
  fs::path output_dir = "out";

  std::vector<backends::BackendConfig> backends;
  DepthPolicy depth_policy;
  grading::Scope scope = grading::Scope::kGlobal;
  metrics::EvalSettings eval;
  std::size_t context_token_budget = 77;
  double clip_weight = scoring::kDefaultClipWeight;
  scoring::ParseMode parse_mode = scoring::ParseMode::kLenient;
  metaeval::AgreementOptions agreement;
  bool scatter = true;

  static PipelineConfig from_json(const nlohmann::json& j, const fs::path& base_dir = {});

  /// Throws ConfigError for an unknown model id.
  const backends::BackendConfig& backend(std::string_view model_id) const;

  fs::path pool_path() const { return output_dir / "pool.jsonl"; }
  fs::path scores_path(std::string_view model_id) const;
  fs::path qrels_path(std::string_view model_id) const;
  fs::path cache_path(std::string_view model_id) const;
};

/// Model ids such as "openai/clip-vit-large-patch14" reduced to characters
/// safe in file names.
std::string file_safe(std::string_view model_id);

/// Reads every non-hidden regular file in `dir` as a run, ordered by file
/// name. Throws DataError for an empty directory or duplicate run tags.
std::vector<Run> load_runs(const fs::path& dir, const metaeval::ClassMap* classes = nullptr);

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

void cmd_pool(const PipelineConfig& cfg, Streams io);
void cmd_judge(const PipelineConfig& cfg, std::string_view model_id, Streams io);
void cmd_grade(const PipelineConfig& cfg, std::string_view model_id, Streams io);
/// Writes eval.<qrels file stem>.csv and returns its path.
fs::path cmd_eval(const PipelineConfig& cfg, const fs::path& qrels_path, Streams io);
void cmd_compare(const PipelineConfig& cfg, std::string_view model_id, Streams io);

/// Command-line entry point; returns the process exit code.
int run_cli(int argc, const char* const* argv, Streams io);

}  // namespace autojudge::pipeline
