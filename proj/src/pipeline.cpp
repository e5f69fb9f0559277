#include "autojudge/pipeline.hpp"

#include <algorithm>
#include <iostream>
#include <mutex>
#include <set>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "autojudge/error.hpp"
#include "autojudge/text.hpp"

namespace autojudge::pipeline {

using json = nlohmann::json;

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

void require_file(const fs::path& p, std::string_view what) {
  if (p.empty()) throw ConfigError(std::string(what) + " path is not configured");
  if (!fs::is_regular_file(p))
    throw ConfigError(std::string(what) + " not found: " + p.string());
}

void print_warnings(const Warnings& w, std::ostream& err) {
  for (const auto& line : w) err << "warning: " << line << '\n';
}

std::optional<metaeval::ClassMap> load_classes(const PipelineConfig& cfg) {
  if (cfg.run_manifest.empty()) return std::nullopt;
  require_file(cfg.run_manifest, "run manifest");
  return parse_run_manifest(text::read_file(cfg.run_manifest));
}

void write_output(const PipelineConfig& cfg, const fs::path& path, std::string_view contents) {
  fs::create_directories(cfg.output_dir);
  text::write_file_atomic(path, contents);
}

}  // namespace

std::string file_safe(std::string_view model_id) {
  std::string out;
  for (char c : model_id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '.' || c == '-' || c == '_';
    out += ok ? c : '_';
  }
  return out;
}

PipelineConfig PipelineConfig::from_json(const json& j, const fs::path& base_dir) {
  PipelineConfig cfg;
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  try {
    auto path_field = [&](const char* key, fs::path& dst) {
      if (auto it = j.find(key); it != j.end() && !it->is_null())
        dst = resolve(base_dir, it->get<std::string>());
    };
    path_field("topics", cfg.topics);
    path_field("corpus", cfg.corpus);
    path_field("runs_dir", cfg.runs_dir);
    path_field("reference_qrels", cfg.reference_qrels);
    path_field("run_manifest", cfg.run_manifest);
    path_field("prompt_template", cfg.prompt_template);
    path_field("output_dir", cfg.output_dir);
    if (!j.contains("output_dir")) cfg.output_dir = resolve(base_dir, "out");

    if (auto p = j.find("pooling"); p != j.end()) {
      cfg.depth_policy.default_depth = p->value("default_depth", cfg.depth_policy.default_depth);
      if (auto d = p->find("depths"); d != p->end())
        for (const auto& [tag, depth] : d->items()) cfg.depth_policy.per_run[tag] = depth.get<int>();
    }
    if (cfg.depth_policy.default_depth < 0) throw ConfigError("pooling depth must be >= 0");
    if (auto g = j.find("grading"); g != j.end())
      cfg.scope = grading::scope_from_string(g->value("scope", "global"));
    if (auto m = j.find("metrics"); m != j.end()) {
      cfg.eval.k = m->value("k", cfg.eval.k);
      cfg.eval.binarize_at = m->value("binarize_at", cfg.eval.binarize_at);
    }
    if (cfg.eval.k < 1) throw ConfigError("metrics.k must be >= 1");
    if (cfg.eval.binarize_at != 1 && cfg.eval.binarize_at != 2)
      throw ConfigError("metrics.binarize_at must be 1 or 2");
    if (auto s = j.find("scoring"); s != j.end()) {
      cfg.clip_weight = s->value("clip_weight", cfg.clip_weight);
      cfg.context_token_budget = s->value("context_token_budget", cfg.context_token_budget);
      const std::string mode = s->value("parse_mode", "lenient");
      if (mode == "strict") cfg.parse_mode = scoring::ParseMode::kStrict;
      else if (mode == "lenient") cfg.parse_mode = scoring::ParseMode::kLenient;
      else throw ConfigError("scoring.parse_mode must be strict or lenient");
    }
    if (cfg.context_token_budget < 1) throw ConfigError("context_token_budget must be >= 1");
    if (!(cfg.clip_weight > 0)) throw ConfigError("clip_weight must be positive");
    if (auto a = j.find("agreement"); a != j.end()) {
      const std::string w = a->value("weighting", "none");
      if (w == "none") cfg.agreement.weighting = metaeval::KappaWeighting::kNone;
      else if (w == "linear") cfg.agreement.weighting = metaeval::KappaWeighting::kLinear;
      else if (w == "quadratic") cfg.agreement.weighting = metaeval::KappaWeighting::kQuadratic;
      else throw ConfigError("agreement.weighting must be none, linear or quadratic");
      cfg.agreement.missing_as_zero = a->value("missing_as_zero", false);
    }
    cfg.scatter = j.value("scatter", cfg.scatter);
    if (auto b = j.find("backends"); b != j.end()) {
      std::set<std::string> ids;
      for (const auto& entry : *b) {
        cfg.backends.push_back(backends::BackendConfig::from_json(entry, base_dir));
        if (!ids.insert(cfg.backends.back().model_id).second)
          throw ConfigError("duplicate backend model_id " + cfg.backends.back().model_id);
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  return cfg;
}

const backends::BackendConfig& PipelineConfig::backend(std::string_view model_id) const {
  for (const auto& b : backends)
    if (b.model_id == model_id) return b;
  throw ConfigError("unknown model id \"" + std::string(model_id) + "\"");
}

fs::path PipelineConfig::scores_path(std::string_view model_id) const {
  return output_dir / ("scores." + file_safe(model_id) + ".jsonl");
}
fs::path PipelineConfig::qrels_path(std::string_view model_id) const {
  return output_dir / ("qrels." + file_safe(model_id) + ".txt");
}
fs::path PipelineConfig::cache_path(std::string_view model_id) const {
  return output_dir / ("cache." + file_safe(model_id) + ".jsonl");
}

std::vector<Run> load_runs(const fs::path& dir, const metaeval::ClassMap* classes) {
  if (dir.empty()) throw ConfigError("runs_dir is not configured");
  if (!fs::is_directory(dir)) throw ConfigError("runs directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (entry.is_regular_file() && !name.empty() && name.front() != '.')
      files.push_back(entry.path());
  }
  if (files.empty()) throw DataError("runs directory is empty: " + dir.string());
  std::sort(files.begin(), files.end());

  std::vector<Run> runs;
  std::set<std::string> tags;
  for (const auto& file : files) {
    Run run;
    try {
      run = parse_run(text::read_file(file));
    } catch (const DataError& e) {
      throw DataError(file.string() + ": " + e.what());
    }
    if (run.entries.empty()) throw DataError(file.string() + ": run file has no entries");
    if (!tags.insert(run.tag).second) throw DataError("duplicate run tag " + run.tag);
    if (classes) {
      auto it = classes->find(run.tag);
      if (it != classes->end()) run.system_class = it->second;
    }
    runs.push_back(std::move(run));
  }
  return runs;
}

void cmd_pool(const PipelineConfig& cfg, Streams io) {
  auto runs = load_runs(cfg.runs_dir);
  auto p = pool(runs, cfg.depth_policy);
  write_output(cfg, cfg.pool_path(), write_pool(p));
  io.out << "pool: " << p.pairs.size() << " pairs from " << runs.size() << " runs -> "
         << cfg.pool_path().string() << '\n';
}

void cmd_judge(const PipelineConfig& cfg, std::string_view model_id, Streams io) {
  const auto& bcfg = cfg.backend(model_id);
  require_file(cfg.pool_path(), "pool file (run `pool` first)");
  require_file(cfg.topics, "topics");
  require_file(cfg.corpus, "corpus manifest");

  Warnings warnings;
  auto topics = load_topics(text::read_file(cfg.topics), &warnings);
  print_warnings(warnings, io.err);
  auto corpus = load_corpus(text::read_file(cfg.corpus));
  // Relative image paths are relative to the manifest, not the working directory.
  for (auto& doc : corpus) {
    const auto& ref = doc.image_ref;
    if (ref.find("://") != std::string::npos || ref.rfind("data:", 0) == 0) continue;
    if (fs::path(ref).is_relative()) doc.image_ref = (cfg.corpus.parent_path() / ref).string();
  }
  auto p = parse_pool(text::read_file(cfg.pool_path()));

  std::optional<prompting::PromptTemplate> tmpl;
  if (!cfg.prompt_template.empty()) {
    require_file(cfg.prompt_template, "prompt template");
    tmpl = prompting::PromptTemplate::from_text(text::read_file(cfg.prompt_template));
  }

  auto backend = backends::make_backend(bcfg);
  fs::create_directories(cfg.output_dir);
  backends::JudgmentCache cache(cfg.cache_path(model_id));
  const std::size_t cached_before = cache.size();

  scoring::ScoreOptions options;
  options.judge.prompt_template = tmpl ? &*tmpl : nullptr;
  options.judge.context_token_budget = cfg.context_token_budget;
  options.clip_weight = cfg.clip_weight;
  options.parse_mode = cfg.parse_mode;
  std::mutex progress_mu;
  std::size_t last_pct = 0;
  options.judge.progress = [&](std::size_t done, std::size_t total) {
    std::lock_guard lock(progress_mu);
    const std::size_t pct = total ? done * 100 / total : 100;
    if (pct >= last_pct + 10 || done == total) {
      last_pct = pct;
      io.err << "judge " << model_id << ": " << done << '/' << total << " requests\n";
    }
  };

  auto records = scoring::score_pool(p, topics, corpus, *backend, &cache, options);
  write_output(cfg, cfg.scores_path(model_id), scoring::write_score_records(records));

  const auto failed = std::count_if(records.begin(), records.end(),
                                    [](const auto& r) { return !r.scored(); });
  io.err << "judge " << model_id << ": " << records.size() - static_cast<std::size_t>(failed)
         << " scored, " << failed << " failed, " << cache.size() - cached_before
         << " new responses cached\n";
  std::size_t shown = 0;
  for (const auto& r : records) {
    if (r.scored() || shown >= 5) continue;
    io.err << "  failed (" << r.qid << ", " << r.docid << "): " << r.error.value_or("") << '\n';
    ++shown;
  }
  io.out << "scores: " << records.size() << " records -> " << cfg.scores_path(model_id).string()
         << '\n';
}

void cmd_grade(const PipelineConfig& cfg, std::string_view model_id, Streams io) {
  cfg.backend(model_id);
  require_file(cfg.scores_path(model_id), "scores file (run `judge` first)");
  auto records = scoring::parse_score_records(text::read_file(cfg.scores_path(model_id)));
  auto qrels = grading::grade_records(records, cfg.scope);
  write_output(cfg, cfg.qrels_path(model_id), write_qrels(qrels));
  io.out << "qrels: " << qrels.size() << " judgments -> " << cfg.qrels_path(model_id).string()
         << '\n';
}

fs::path cmd_eval(const PipelineConfig& cfg, const fs::path& qrels_path, Streams io) {
  require_file(qrels_path, "qrels");
  auto qrels = parse_qrels(text::read_file(qrels_path));
  auto runs = load_runs(cfg.runs_dir);
  std::vector<metrics::RunEvaluation> evals;
  Warnings warnings;
  for (const auto& run : runs) evals.push_back(metrics::evaluate_run(run, qrels, cfg.eval, &warnings));
  print_warnings(warnings, io.err);
  auto out_path = cfg.output_dir / ("eval." + qrels_path.stem().string() + ".csv");
  write_output(cfg, out_path, metrics::write_evaluations_csv(evals));
  io.out << "eval: " << evals.size() << " runs -> " << out_path.string() << '\n';
  return out_path;
}

void cmd_compare(const PipelineConfig& cfg, std::string_view model_id, Streams io) {
  cfg.backend(model_id);
  require_file(cfg.reference_qrels, "reference qrels");
  require_file(cfg.qrels_path(model_id), "model qrels (run `grade` first)");
  auto ref = parse_qrels(text::read_file(cfg.reference_qrels));
  auto model = parse_qrels(text::read_file(cfg.qrels_path(model_id)));
  model.set_source(std::string(model_id));

  auto classes = load_classes(cfg);
  auto runs = load_runs(cfg.runs_dir, classes ? &*classes : nullptr);

  std::vector<scoring::ScoreRecord> records;
  if (fs::is_regular_file(cfg.scores_path(model_id)))
    records = scoring::parse_score_records(text::read_file(cfg.scores_path(model_id)));
  else
    io.err << "warning: no scores file for " << model_id << "; CDF omitted\n";

  metaeval::CompareOptions options{cfg.eval, cfg.agreement};
  auto report = metaeval::compare(runs, ref, model, classes ? &*classes : nullptr, options, records);
  print_warnings(report.warnings, io.err);

  const auto safe = file_safe(model_id);
  write_output(cfg, cfg.output_dir / ("report." + safe + ".json"), metaeval::report_json(report));
  write_output(cfg, cfg.output_dir / ("table2." + safe + ".csv"),
               metaeval::correlation_table_csv(report));
  write_output(cfg, cfg.output_dir / ("table3." + safe + ".csv"), metaeval::bias_table_csv(report));
  write_output(cfg, cfg.output_dir / ("cdf." + safe + ".csv"), metaeval::cdf_csv(report));
  write_output(cfg, cfg.output_dir / ("confusion." + safe + ".csv"), metaeval::confusion_csv(report));
  if (cfg.scatter)
    write_output(cfg, cfg.output_dir / ("scatter." + safe + ".svg"), metaeval::scatter_svg(report));

  io.out << "compare " << model_id << ": kappa " << text::format_fixed(report.kappa, 4);
  for (const auto& metric : report.metrics) {
    const auto& tau = report.correlations.at(metric).tau;
    io.out << ", " << metric << " tau " << (tau ? text::format_fixed(*tau, 4) : "undefined");
  }
  io.out << '\n';
}

// ---------------------------------------------------------------------------

namespace {

// Sets a dotted key ("metrics.k") in `j`. The value is parsed as JSON when it
// is valid JSON and kept as a string otherwise.
void set_dotted(json& j, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("--set expects key=value, got \"" + assignment + "\"");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    auto dot = key.find('.', start);
    std::string part = key.substr(start, dot - start);
    if (part.empty()) throw ConfigError("bad --set key \"" + key + "\"");
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

}  // namespace

int run_cli(int argc, const char* const* argv, Streams io) {
  CLI::App app{"Automatic relevance judgments with vision-language models", "autojudge"};
  app.require_subcommand(1);

  std::string config_path, model, qrels_arg;
  std::vector<std::string> sets;
  std::map<std::string, std::string> path_flags;
  std::optional<int> depth, k, binarize_at;
  std::optional<std::string> scope;

  app.add_option("--config", config_path, "Pipeline config (JSON)");
  app.add_option("--model", model, "Model id of a configured backend");
  app.add_option("--qrels", qrels_arg, "Qrels file to evaluate with (eval)");
  for (const char* name : {"topics", "corpus", "runs-dir", "reference-qrels", "run-manifest",
                           "template", "output-dir"}) {
    app.add_option(std::string("--") + name, path_flags[name], std::string("Override ") + name);
  }
  app.add_option("--depth", depth, "Default pooling depth");
  app.add_option("--k", k, "NDCG cutoff");
  app.add_option("--binarize-at", binarize_at, "Grade counted as relevant by MAP (1 or 2)");
  app.add_option("--scope", scope, "Grading scope: global or per_topic");
  app.add_option("--set", sets, "Override any config field: key.path=value");

  auto* pool_cmd = app.add_subcommand("pool", "Pool run results into pool.jsonl");
  auto* judge_cmd = app.add_subcommand("judge", "Score pooled pairs with a backend");
  auto* grade_cmd = app.add_subcommand("grade", "Turn scores into graded qrels");
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate all runs against a qrels file");
  auto* compare_cmd = app.add_subcommand("compare", "Compare model qrels with reference qrels");
  for (auto* sub : {pool_cmd, judge_cmd, grade_cmd, eval_cmd, compare_cmd}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, io.out, io.err);
    return code == 0 ? 0 : static_cast<int>(ExitCode::kConfig);
  }

  try {
    json j = json::object();
    fs::path base_dir;
    if (!config_path.empty()) {
      const fs::path cp = fs::absolute(config_path);
      try {
        j = json::parse(text::read_file(cp));
      } catch (const json::parse_error& e) {
        throw ConfigError("cannot parse config " + cp.string() + ": " + e.what());
      }
      base_dir = cp.parent_path();
    }
    for (const auto& s : sets) set_dotted(j, s);
    const std::map<std::string, std::string> key_for = {
        {"topics", "topics"},         {"corpus", "corpus"},
        {"runs-dir", "runs_dir"},     {"reference-qrels", "reference_qrels"},
        {"run-manifest", "run_manifest"}, {"template", "prompt_template"},
        {"output-dir", "output_dir"}};
    for (const auto& [flag, value] : path_flags)
      if (!value.empty()) j[key_for.at(flag)] = fs::absolute(value).string();
    if (depth) j["pooling"]["default_depth"] = *depth;
    if (k) j["metrics"]["k"] = *k;
    if (binarize_at) j["metrics"]["binarize_at"] = *binarize_at;
    if (scope) j["grading"]["scope"] = *scope;

    const auto cfg = PipelineConfig::from_json(j, base_dir);
    auto need_model = [&]() -> const std::string& {
      if (model.empty()) throw ConfigError("--model is required for this command");
      return model;
    };

    if (*pool_cmd) cmd_pool(cfg, io);
    else if (*judge_cmd) cmd_judge(cfg, need_model(), io);
    else if (*grade_cmd) cmd_grade(cfg, need_model(), io);
    else if (*eval_cmd) {
      fs::path q = !qrels_arg.empty() ? fs::absolute(qrels_arg)
                   : !model.empty()   ? cfg.qrels_path(model)
                                      : cfg.reference_qrels;
      cmd_eval(cfg, q, io);
    } else if (*compare_cmd) cmd_compare(cfg, need_model(), io);
    return static_cast<int>(ExitCode::kSuccess);
  } catch (const Error& e) {
    io.err << "error: " << e.what() << '\n';
    return static_cast<int>(e.exit_code());
  } catch (const fs::filesystem_error& e) {
    io.err << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kConfig);
  } catch (const std::exception& e) {
    io.err << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kData);
  }
}

}  // namespace autojudge::pipeline
