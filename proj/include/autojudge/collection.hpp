#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace autojudge {

using Warnings = std::vector<std::string>;

/// One test query: the textual context of a Wikipedia section.
struct Topic {
  std::string qid;
  std::string page_title;
  std::string page_context;
  std::string section_title;
  std::string section_context;

  bool operator==(const Topic&) const = default;
};

struct ImageDoc {
  std::string docid;
  std::string image_ref;  // file path or URL
  std::optional<std::string> caption;

  bool operator==(const ImageDoc&) const = default;
};

struct RunEntry {
  std::string qid;
  std::string docid;
  int rank = 0;
  double score = 0.0;
  std::string tag;

  bool operator==(const RunEntry&) const = default;
};

enum class SystemClass { kClipBased, kOther };

std::string_view to_string(SystemClass c);
SystemClass system_class_from_string(std::string_view s);

struct Run {
  std::string tag;
  SystemClass system_class = SystemClass::kOther;
  std::vector<RunEntry> entries;  // file order

  /// Entries of one topic in evaluation order: score descending, ties broken
  /// by docid ascending.
  std::vector<const RunEntry*> ranked(std::string_view qid) const;
  /// Distinct qids in first-appearance order.
  std::vector<std::string> qids() const;

  bool operator==(const Run&) const = default;
};

using Grade = int;
inline constexpr Grade kMinGrade = 0;
inline constexpr Grade kMaxGrade = 2;

/// Graded judgments keyed by qid, then docid. Iteration order is (qid, docid).
class Qrels {
 public:
  using TopicJudgments = std::map<std::string, Grade, std::less<>>;
  using Map = std::map<std::string, TopicJudgments, std::less<>>;

  Qrels() = default;
  explicit Qrels(std::string source) : source_(std::move(source)) {}

  /// Inserts a judgment. Throws ValidationError on an out-of-range grade or a
  /// duplicate key.
  void add(std::string_view qid, std::string_view docid, Grade grade);
  std::optional<Grade> grade(std::string_view qid, std::string_view docid) const;
  /// Judgments for one topic, or nullptr if the topic has none.
  const TopicJudgments* topic(std::string_view qid) const;

  const Map& judgments() const noexcept { return map_; }
  std::size_t size() const noexcept { return size_; }
  bool empty() const noexcept { return size_ == 0; }

  /// "human" for reference qrels, otherwise the model id.
  const std::string& source() const noexcept { return source_; }
  void set_source(std::string s) { source_ = std::move(s); }

  /// Equality compares judgments only.
  bool operator==(const Qrels& other) const { return map_ == other.map_; }

 private:
  Map map_;
  std::size_t size_ = 0;
  std::string source_ = "human";
};

using DocKey = std::pair<std::string, std::string>;  // (qid, docid)

struct DepthPolicy {
  int default_depth = 25;
  std::map<std::string, int, std::less<>> per_run;

  int depth_for(std::string_view tag) const;
};

struct Pool {
  std::set<DocKey> pairs;
  DepthPolicy depth_policy;
};

enum class GradeMode { kStrict, kClamp };

Run parse_run(std::string_view text);
std::string write_run(const Run& run);

Qrels parse_qrels(std::string_view text, GradeMode mode = GradeMode::kStrict);
std::string write_qrels(const Qrels& qrels);

Pool pool(const std::vector<Run>& runs, const DepthPolicy& policy);
std::string write_pool(const Pool& pool);
Pool parse_pool(std::string_view text);

std::vector<Topic> load_topics(std::string_view text, Warnings* warnings = nullptr);
std::vector<ImageDoc> load_corpus(std::string_view text);

/// Run manifest: JSON object mapping run tag to "clip_based" or "other".
std::map<std::string, SystemClass, std::less<>> parse_run_manifest(std::string_view text);

}  // namespace autojudge
