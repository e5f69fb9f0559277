#include "autojudge/prompting.hpp"

#include <array>
#include <map>
#include <stdexcept>

#include "autojudge/error.hpp"
#include "autojudge/text.hpp"

namespace autojudge::prompting {

namespace {

constexpr std::array<std::string_view, 4> kPlaceholders = {
    "page_title", "page_context", "section_title", "section_context"};

constexpr std::string_view kRelevanceHeader = "Relevance Instruction:";
constexpr std::string_view kOutputHeader = "Output Instruction:";

constexpr std::string_view kStandardContext =
    "Context:\n"
    "Page Title: {page_title}\n"
    "Page Context: {page_context}\n"
    "Section Title: {section_title}\n"
    "Section Context: {section_context}";

constexpr std::string_view kStandardRelevance =
    "Relevance Instruction:\n"
    "Think carefully about which images best illustrate the SECTION subject matter. Given the "
    "text and the image please answer the following questions given the criteria listed as "
    "follows:\n"
    "* Images must be significant and relevant in the topic's context, not primarily "
    "decorative. They are often an important illustrative aid to understanding.\n"
    "* Images should look like what they are meant to illustrate, whether or not they are "
    "provably authentic.\n"
    "* Textual information should almost always be entered as text rather than as an image.";

constexpr std::string_view kStandardOutput =
    "Output Instruction:\n"
    "Rate the image's overall relevance (integer, scale: 1-100) in terms of matching the "
    "text.\n"
    "Output format: \"Relevance: <score>\"";

bool is_ident_char(char c) { return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_'; }

// Every "{identifier}" occurrence, in order.
std::vector<std::string_view> find_placeholders(std::string_view s) {
  std::vector<std::string_view> out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '{') continue;
    std::size_t j = i + 1;
    while (j < s.size() && is_ident_char(s[j])) ++j;
    if (j > i + 1 && j < s.size() && s[j] == '}') {
      out.push_back(s.substr(i + 1, j - i - 1));
      i = j;
    }
  }
  return out;
}

std::string substitute(std::string_view tmpl, const Topic& t) {
  const std::map<std::string_view, const std::string*> values = {
      {"page_title", &t.page_title},
      {"page_context", &t.page_context},
      {"section_title", &t.section_title},
      {"section_context", &t.section_context}};
  std::string out;
  out.reserve(tmpl.size() + t.page_context.size() + t.section_context.size() + 64);
  for (std::size_t i = 0; i < tmpl.size(); ++i) {
    if (tmpl[i] == '{') {
      auto close = tmpl.find('}', i);
      if (close != std::string_view::npos) {
        auto it = values.find(tmpl.substr(i + 1, close - i - 1));
        if (it != values.end()) {
          out += *it->second;
          i = close;
          continue;
        }
      }
    }
    out += tmpl[i];
  }
  return out;
}

}  // namespace

PromptTemplate::PromptTemplate(std::string context_block, std::string relevance_instruction,
                               std::string output_instruction)
    : context_block_(std::move(context_block)),
      relevance_instruction_(std::move(relevance_instruction)),
      output_instruction_(std::move(output_instruction)) {
  std::map<std::string_view, int> counts;
  for (auto name : find_placeholders(context_block_)) ++counts[name];
  for (auto name : kPlaceholders) {
    if (counts[name] != 1)
      throw ConfigError("context block must contain {" + std::string(name) +
                            "} exactly once");
  }
  for (const auto& [name, n] : counts) {
    bool known = false;
    for (auto p : kPlaceholders) known = known || p == name;
    if (!known) throw ConfigError("unknown placeholder {" + std::string(name) + "}");
  }
  for (const auto* part : {&relevance_instruction_, &output_instruction_}) {
    auto found = find_placeholders(*part);
    if (!found.empty())
      throw ConfigError("placeholder {" + std::string(found.front()) +
                            "} outside the context block");
  }
}

const PromptTemplate& PromptTemplate::standard() {
  static const PromptTemplate tmpl{std::string(kStandardContext), std::string(kStandardRelevance),
                                   std::string(kStandardOutput)};
  return tmpl;
}

PromptTemplate PromptTemplate::from_text(std::string_view text) {
  std::string parts[3];
  int section = 0;
  bool first_in_section[3] = {true, true, true};
  text::for_each_line(text, [&](std::size_t, std::string_view line) {
    if (line == kRelevanceHeader && section < 1) section = 1;
    else if (line == kOutputHeader && section < 2) section = 2;
    if (!first_in_section[section]) parts[section] += '\n';
    first_in_section[section] = false;
    parts[section] += line;
  });
  for (auto& p : parts)
    while (!p.empty() && p.back() == '\n') p.pop_back();
  return PromptTemplate(std::move(parts[0]), std::move(parts[1]), std::move(parts[2]));
}

std::string PromptTemplate::to_text() const {
  std::string out = context_block_;
  for (const auto* part : {&relevance_instruction_, &output_instruction_}) {
    if (part->empty()) continue;
    out += '\n';
    out += *part;
  }
  return out;
}

RenderedPrompt render_full(const Topic& topic, const ImageDoc& doc, const PromptTemplate& tmpl) {
  std::string text = substitute(tmpl.context_block(), topic);
  for (const auto* part : {&tmpl.relevance_instruction(), &tmpl.output_instruction()}) {
    if (part->empty()) continue;
    text += '\n';
    text += *part;
  }
  return RenderedPrompt{std::move(text), doc.image_ref};
}

std::vector<TokenSpan> WhitespaceTokenizer::tokenize(std::string_view text) const {
  std::vector<TokenSpan> spans;
  for (auto field : text::split_ws(text)) {
    auto begin = static_cast<std::size_t>(field.data() - text.data());
    spans.push_back({begin, begin + field.size()});
  }
  return spans;
}

std::string context_text(const Topic& topic) {
  std::string out;
  for (const auto* field :
       {&topic.page_title, &topic.page_context, &topic.section_title, &topic.section_context}) {
    if (field->empty()) continue;
    if (!out.empty()) out += '\n';
    out += *field;
  }
  return out;
}

std::string render_context_only(const Topic& topic, std::size_t budget,
                                const Tokenizer& tokenizer) {
  if (budget == 0) throw std::invalid_argument("token budget must be at least 1");
  std::string full = context_text(topic);
  auto spans = tokenizer.tokenize(full);
  if (spans.size() <= budget) return full;
  full.resize(spans[budget - 1].end);
  return full;
}

}  // namespace autojudge::prompting
