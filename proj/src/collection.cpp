#include "autojudge/collection.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "autojudge/error.hpp"
#include "autojudge/text.hpp"

namespace autojudge {

using json = nlohmann::json;

std::string_view to_string(SystemClass c) {
  return c == SystemClass::kClipBased ? "clip_based" : "other";
}

SystemClass system_class_from_string(std::string_view s) {
  if (s == "clip_based") return SystemClass::kClipBased;
  if (s == "other") return SystemClass::kOther;
  throw ValidationError("unknown system class \"" + std::string(s) + "\"");
}

namespace {

bool ranked_before(const RunEntry& a, const RunEntry& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.docid < b.docid;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

// Checks rank and docid uniqueness per topic and that rank order agrees with
// the canonical score order.
void validate_run(const Run& run) {
  std::unordered_map<std::string_view, std::vector<const RunEntry*>> by_qid;
  for (const auto& e : run.entries) by_qid[e.qid].push_back(&e);

  for (auto& [qid, entries] : by_qid) {
    std::unordered_set<std::string_view> docids;
    for (const auto* e : entries) {
      if (!docids.insert(e->docid).second)
        throw ValidationError("run " + run.tag + ": duplicate docid " + e->docid +
                              " for topic " + std::string(qid));
    }
    std::sort(entries.begin(), entries.end(),
              [](const RunEntry* a, const RunEntry* b) { return a->rank < b->rank; });
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (entries[i]->rank != static_cast<int>(i + 1))
        throw ValidationError("run " + run.tag + ": ranks for topic " + std::string(qid) +
                              " are not 1.." + std::to_string(entries.size()) +
                              " without duplicates");
      if (i > 0 && !ranked_before(*entries[i - 1], *entries[i]))
        throw ValidationError("run " + run.tag + ": topic " + std::string(qid) + " rank " +
                              std::to_string(entries[i]->rank) +
                              " is inconsistent with score order");
    }
  }
}

}  // namespace

std::vector<const RunEntry*> Run::ranked(std::string_view qid) const {
  std::vector<const RunEntry*> out;
  for (const auto& e : entries)
    if (e.qid == qid) out.push_back(&e);
  std::sort(out.begin(), out.end(),
            [](const RunEntry* a, const RunEntry* b) { return ranked_before(*a, *b); });
  return out;
}

std::vector<std::string> Run::qids() const {
  std::vector<std::string> out;
  std::unordered_set<std::string_view> seen;
  for (const auto& e : entries)
    if (seen.insert(e.qid).second) out.push_back(e.qid);
  return out;
}

Run parse_run(std::string_view text) {
  Run run;
  bool have_tag = false;
  text::for_each_line(text, [&](std::size_t lineno, std::string_view line) {
    if (text::is_blank(line)) return;
    auto f = text::split_ws(line);
    if (f.size() != 6)
      throw ParseError(lineno, "expected 6 fields, got " + std::to_string(f.size()));
    if (f[1] != "Q0") throw ParseError(lineno, "second field must be Q0");
    RunEntry e;
    e.qid = f[0];
    e.docid = f[2];
    if (!parse_number(f[3], e.rank) || e.rank < 1)
      throw ParseError(lineno, "rank must be a positive integer: " + std::string(f[3]));
    if (!parse_number(f[4], e.score) || !std::isfinite(e.score))
      throw ParseError(lineno, "score is not a finite number: " + std::string(f[4]));
    e.tag = f[5];
    if (!have_tag) {
      run.tag = e.tag;
      have_tag = true;
    } else if (e.tag != run.tag) {
      throw ValidationError("line " + std::to_string(lineno) + ": run tag " + e.tag +
                            " differs from " + run.tag);
    }
    run.entries.push_back(std::move(e));
  });
  validate_run(run);
  return run;
}

std::string write_run(const Run& run) {
  std::string out;
  for (const auto& e : run.entries) {
    out += e.qid;
    out += " Q0 ";
    out += e.docid;
    out += ' ';
    out += std::to_string(e.rank);
    out += ' ';
    out += text::format_double(e.score);
    out += ' ';
    out += e.tag;
    out += '\n';
  }
  return out;
}

void Qrels::add(std::string_view qid, std::string_view docid, Grade grade) {
  if (grade < kMinGrade || grade > kMaxGrade)
    throw ValidationError("grade " + std::to_string(grade) + " outside 0..2 for (" +
                          std::string(qid) + ", " + std::string(docid) + ")");
  auto& topic = map_[std::string(qid)];
  auto [it, inserted] = topic.emplace(std::string(docid), grade);
  if (!inserted)
    throw ValidationError("duplicate judgment for (" + std::string(qid) + ", " +
                          std::string(docid) + ")");
  ++size_;
}

std::optional<Grade> Qrels::grade(std::string_view qid, std::string_view docid) const {
  auto t = map_.find(qid);
  if (t == map_.end()) return std::nullopt;
  auto d = t->second.find(docid);
  if (d == t->second.end()) return std::nullopt;
  return d->second;
}

const Qrels::TopicJudgments* Qrels::topic(std::string_view qid) const {
  auto t = map_.find(qid);
  return t == map_.end() ? nullptr : &t->second;
}

Qrels parse_qrels(std::string_view text, GradeMode mode) {
  Qrels qrels;
  text::for_each_line(text, [&](std::size_t lineno, std::string_view line) {
    if (text::is_blank(line)) return;
    auto f = text::split_ws(line);
    if (f.size() != 4)
      throw ParseError(lineno, "expected 4 fields, got " + std::to_string(f.size()));
    int grade = 0;
    if (!parse_number(f[3], grade))
      throw ParseError(lineno, "grade is not an integer: " + std::string(f[3]));
    if (grade < kMinGrade || grade > kMaxGrade) {
      if (mode == GradeMode::kStrict)
        throw ParseError(lineno, "grade " + std::to_string(grade) + " outside 0..2");
      grade = std::clamp(grade, kMinGrade, kMaxGrade);
    }
    try {
      qrels.add(f[0], f[2], grade);
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(lineno) + ": " + e.what());
    }
  });
  return qrels;
}

std::string write_qrels(const Qrels& qrels) {
  std::string out;
  for (const auto& [qid, docs] : qrels.judgments()) {
    for (const auto& [docid, grade] : docs) {
      out += qid;
      out += " 0 ";
      out += docid;
      out += ' ';
      out += std::to_string(grade);
      out += '\n';
    }
  }
  return out;
}

int DepthPolicy::depth_for(std::string_view tag) const {
  auto it = per_run.find(tag);
  return it == per_run.end() ? default_depth : it->second;
}

Pool pool(const std::vector<Run>& runs, const DepthPolicy& policy) {
  Pool p;
  p.depth_policy = policy;
  for (const auto& run : runs) {
    const int depth = policy.depth_for(run.tag);
    for (const auto& e : run.entries)
      if (e.rank <= depth) p.pairs.emplace(e.qid, e.docid);
  }
  return p;
}

std::string write_pool(const Pool& pool) {
  std::string out;
  for (const auto& [qid, docid] : pool.pairs) {
    json j = {{"docid", docid}, {"qid", qid}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

Pool parse_pool(std::string_view text) {
  Pool p;
  text::for_each_line(text, [&](std::size_t lineno, std::string_view line) {
    if (text::is_blank(line)) return;
    try {
      auto j = json::parse(line);
      p.pairs.emplace(j.at("qid").get<std::string>(), j.at("docid").get<std::string>());
    } catch (const json::exception& e) {
      throw ParseError(lineno, std::string("invalid pool entry: ") + e.what());
    }
  });
  return p;
}

std::vector<Topic> load_topics(std::string_view text, Warnings* warnings) {
  std::vector<Topic> topics;
  std::unordered_set<std::string> seen;
  text::for_each_line(text, [&](std::size_t lineno, std::string_view line) {
    if (text::is_blank(line)) return;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(lineno, std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ParseError(lineno, "topic must be a JSON object");
    auto qid = j.find("qid");
    if (qid == j.end() || !qid->is_string() || qid->get<std::string>().empty())
      throw ParseError(lineno, "missing qid");
    Topic t;
    t.qid = qid->get<std::string>();
    if (!seen.insert(t.qid).second) throw ParseError(lineno, "duplicate qid " + t.qid);
    auto field = [&](const char* name, std::string& dst) {
      auto it = j.find(name);
      if (it == j.end() || it->is_null()) {
        if (warnings)
          warnings->push_back("topic " + t.qid + " (line " + std::to_string(lineno) +
                              "): missing " + name + ", using empty string");
        return;
      }
      if (!it->is_string()) throw ParseError(lineno, std::string(name) + " must be a string");
      dst = it->get<std::string>();
    };
    field("page_title", t.page_title);
    field("page_context", t.page_context);
    field("section_title", t.section_title);
    field("section_context", t.section_context);
    topics.push_back(std::move(t));
  });
  return topics;
}

std::vector<ImageDoc> load_corpus(std::string_view text) {
  std::vector<ImageDoc> docs;
  std::unordered_set<std::string> seen;
  text::for_each_line(text, [&](std::size_t lineno, std::string_view line) {
    if (text::is_blank(line)) return;
    try {
      auto j = json::parse(line);
      ImageDoc d;
      d.docid = j.at("docid").get<std::string>();
      d.image_ref = j.at("image_ref").get<std::string>();
      if (auto c = j.find("caption"); c != j.end() && !c->is_null())
        d.caption = c->get<std::string>();
      if (d.docid.empty()) throw ParseError(lineno, "empty docid");
      if (!seen.insert(d.docid).second) throw ParseError(lineno, "duplicate docid " + d.docid);
      docs.push_back(std::move(d));
    } catch (const json::exception& e) {
      throw ParseError(lineno, std::string("invalid corpus entry: ") + e.what());
    }
  });
  return docs;
}

std::map<std::string, SystemClass, std::less<>> parse_run_manifest(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(1, std::string("invalid run manifest: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("run manifest must map run tag to class");
  std::map<std::string, SystemClass, std::less<>> out;
  for (const auto& [tag, cls] : j.items()) {
    if (!cls.is_string()) throw ValidationError("class of run " + tag + " must be a string");
    out.emplace(tag, system_class_from_string(cls.get<std::string>()));
  }
  return out;
}

}  // namespace autojudge
