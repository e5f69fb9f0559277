#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "autojudge/backends.hpp"
#include "autojudge/collection.hpp"

namespace autojudge::scoring {

inline constexpr double kDefaultClipWeight = 2.5;
inline constexpr int kMinRelevance = 1;
inline constexpr int kMaxRelevance = 100;

/// One model judgment of a (topic, image) pair. `raw_score` is empty when
/// the pair could not be scored; `error` then says why.
struct ScoreRecord {
  std::string qid;
  std::string docid;
  std::string model_id;
  std::optional<double> raw_score;
  std::optional<std::string> raw_response;
  std::optional<std::string> error;

  bool scored() const noexcept { return raw_score.has_value(); }
  bool operator==(const ScoreRecord&) const = default;
};

/// w * max(cos(text, image), 0). Throws ComputationError on a zero vector
/// or mismatched dimensions.
double clip_score(std::span<const double> text_emb, std::span<const double> img_emb,
                  double w = kDefaultClipWeight);

enum class ParseMode { kStrict, kLenient };

/// Extracts the first "Relevance: <n>" score (case-insensitive, markdown
/// emphasis and a "/100" suffix tolerated). Throws ScoreParseError when no
/// score is present; an out-of-range score throws ScoreRangeError in strict
/// mode and is clamped to 1..100 in lenient mode.
int parse_relevance(std::string_view raw_text, ParseMode mode = ParseMode::kStrict);

struct ScoreOptions {
  backends::JudgeOptions judge;
  double clip_weight = kDefaultClipWeight;
  ParseMode parse_mode = ParseMode::kLenient;
};

/// Scores every pooled pair with `backend`. Records come back sorted by
/// (qid, docid). Throws ConfigError before any backend call if a pooled
/// topic or document is unknown.
std::vector<ScoreRecord> score_pool(const Pool& pool, std::span<const Topic> topics,
                                    std::span<const ImageDoc> corpus, backends::Backend& backend,
                                    backends::JudgmentCache* cache,
                                    const ScoreOptions& options = {});

std::string write_score_records(std::span<const ScoreRecord> records);
std::vector<ScoreRecord> parse_score_records(std::string_view text);

}  // namespace autojudge::scoring
