#include "autojudge/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <regex>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "autojudge/error.hpp"
#include "autojudge/text.hpp"

namespace autojudge::scoring {

using ordered_json = nlohmann::ordered_json;

double clip_score(std::span<const double> text_emb, std::span<const double> img_emb, double w) {
  if (text_emb.size() != img_emb.size())
    throw ComputationError("embedding dimensions differ: " + std::to_string(text_emb.size()) +
                           " vs " + std::to_string(img_emb.size()));
  if (!(w > 0.0)) throw ComputationError("CLIP-S weight must be positive");
  double dot = 0.0, nt = 0.0, ni = 0.0;
  for (std::size_t i = 0; i < text_emb.size(); ++i) {
    dot += text_emb[i] * img_emb[i];
    nt += text_emb[i] * text_emb[i];
    ni += img_emb[i] * img_emb[i];
  }
  if (nt == 0.0 || ni == 0.0) throw ComputationError("zero embedding vector");
  double cosine = dot / (std::sqrt(nt) * std::sqrt(ni));
  cosine = std::min(cosine, 1.0);
  return w * std::max(cosine, 0.0);
}

int parse_relevance(std::string_view raw_text, ParseMode mode) {
  // "relevance", optional "score" and parenthetical, markdown emphasis around
  // the colon, then a number with an optional "/100".
  static const std::regex pattern(
      R"(relevance(?:\s+score)?(?:\s*\([^)\n]*\))?[\s*_`]*:[\s*_`]*(-?\d+(?:\.\d+)?)(?:\s*/\s*100)?)",
      std::regex::ECMAScript | std::regex::icase);
  std::match_results<std::string_view::const_iterator> m;
  if (!std::regex_search(raw_text.begin(), raw_text.end(), m, pattern))
    throw ScoreParseError("no \"Relevance: <score>\" in response");

  const double parsed = std::stod(m[1].str());
  const long value = parsed > 1e9 ? 1000000000L : parsed < -1e9 ? -1000000000L : std::lround(parsed);
  if (value < kMinRelevance || value > kMaxRelevance) {
    if (mode == ParseMode::kStrict)
      throw ScoreRangeError(value, "relevance " + std::to_string(value) + " outside 1..100");
    return static_cast<int>(std::clamp<long>(value, kMinRelevance, kMaxRelevance));
  }
  return static_cast<int>(value);
}

std::vector<ScoreRecord> score_pool(const Pool& pool, std::span<const Topic> topics,
                                    std::span<const ImageDoc> corpus, backends::Backend& backend,
                                    backends::JudgmentCache* cache, const ScoreOptions& options) {
  std::unordered_map<std::string_view, const Topic*> topic_by_id;
  for (const auto& t : topics) topic_by_id.emplace(t.qid, &t);
  std::unordered_map<std::string_view, const ImageDoc*> doc_by_id;
  for (const auto& d : corpus) doc_by_id.emplace(d.docid, &d);

  std::vector<backends::JudgePair> pairs;
  pairs.reserve(pool.pairs.size());
  for (const auto& [qid, docid] : pool.pairs) {
    auto t = topic_by_id.find(qid);
    if (t == topic_by_id.end()) throw ConfigError("pooled topic " + qid + " has no topic entry");
    auto d = doc_by_id.find(docid);
    if (d == doc_by_id.end())
      throw ConfigError("pooled document " + docid + " is missing from the corpus manifest");
    pairs.emplace_back(*t->second, *d->second);
  }

  const auto& model_id = backend.config().model_id;
  const bool generative =
      backend.config().scoring_kind() == backends::BackendKind::kChatGenerative;
  auto responses = backends::judge_batch(pairs, backend, cache, options.judge);

  std::vector<ScoreRecord> records;
  records.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    ScoreRecord rec{pairs[i].first.qid, pairs[i].second.docid, model_id, {}, {}, {}};
    const auto& resp = responses[i];
    if (!resp.ok()) {
      rec.error = *resp.error;
    } else if (generative) {
      rec.raw_response = resp.raw_text;
      try {
        rec.raw_score = parse_relevance(resp.raw_text.value_or(""), options.parse_mode);
      } catch (const ScoreParseError& e) {
        rec.error = e.what();
      }
    } else {
      try {
        rec.raw_score = clip_score(*resp.embedding, *resp.image_embedding, options.clip_weight);
      } catch (const ComputationError& e) {
        rec.error = e.what();
      }
    }
    records.push_back(std::move(rec));
  }
  // pool.pairs iterates in (qid, docid) order already.
  return records;
}

std::string write_score_records(std::span<const ScoreRecord> records) {
  std::string out;
  for (const auto& r : records) {
    ordered_json j;
    j["qid"] = r.qid;
    j["docid"] = r.docid;
    j["model_id"] = r.model_id;
    j["raw_score"] = r.raw_score ? ordered_json(*r.raw_score) : ordered_json(nullptr);
    if (r.raw_response) j["raw_response"] = *r.raw_response;
    if (r.error) j["error"] = *r.error;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<ScoreRecord> parse_score_records(std::string_view text) {
  std::vector<ScoreRecord> records;
  text::for_each_line(text, [&](std::size_t lineno, std::string_view line) {
    if (text::is_blank(line)) return;
    try {
      auto j = ordered_json::parse(line);
      ScoreRecord r;
      r.qid = j.at("qid").get<std::string>();
      r.docid = j.at("docid").get<std::string>();
      r.model_id = j.at("model_id").get<std::string>();
      if (auto s = j.find("raw_score"); s != j.end() && !s->is_null()) r.raw_score = s->get<double>();
      if (auto s = j.find("raw_response"); s != j.end() && !s->is_null())
        r.raw_response = s->get<std::string>();
      if (auto s = j.find("error"); s != j.end() && !s->is_null()) r.error = s->get<std::string>();
      records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(lineno, std::string("invalid score record: ") + e.what());
    }
  });
  return records;
}

}  // namespace autojudge::scoring
