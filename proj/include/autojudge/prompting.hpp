#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "autojudge/collection.hpp"

namespace autojudge::prompting {

/// Instruction prompt with three parts. The context block carries the
/// placeholders {page_title}, {page_context}, {section_title} and
/// {section_context}, each exactly once; the instruction parts carry none.
class PromptTemplate {
 public:
  /// Validates placeholders; throws ValidationError.
  PromptTemplate(std::string context_block, std::string relevance_instruction,
                 std::string output_instruction);

  /// The built-in relevance-estimation template.
  static const PromptTemplate& standard();

  /// Parses a template file. Sections start at lines reading exactly
  /// "Relevance Instruction:" and "Output Instruction:"; everything before the
  /// first is the context block.
  static PromptTemplate from_text(std::string_view text);

  const std::string& context_block() const noexcept { return context_block_; }
  const std::string& relevance_instruction() const noexcept { return relevance_instruction_; }
  const std::string& output_instruction() const noexcept { return output_instruction_; }

  std::string to_text() const;

 private:
  std::string context_block_;
  std::string relevance_instruction_;
  std::string output_instruction_;
};

struct RenderedPrompt {
  std::string text;
  std::string image_ref;
};

RenderedPrompt render_full(const Topic& topic, const ImageDoc& doc,
                           const PromptTemplate& tmpl = PromptTemplate::standard());

struct TokenSpan {
  std::size_t begin;
  std::size_t end;
};

/// Token counting contract used for context truncation. Spans are byte
/// offsets into the input, in order and non-overlapping.
class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  virtual std::vector<TokenSpan> tokenize(std::string_view text) const = 0;
};

class WhitespaceTokenizer final : public Tokenizer {
 public:
  std::vector<TokenSpan> tokenize(std::string_view text) const override;
};

/// Field values only, in template order, joined by newlines; empty fields are
/// skipped.
std::string context_text(const Topic& topic);

/// Context text tail-truncated to at most `budget` tokens. The result is a
/// byte prefix of context_text(topic). Throws std::invalid_argument if
/// budget is 0.
std::string render_context_only(const Topic& topic, std::size_t budget,
                                const Tokenizer& tokenizer = WhitespaceTokenizer{});

}  // namespace autojudge::prompting
