#pragma once

#include <memory>
#include <string>
#include <vector>

namespace pclip {

// Pluggable tokenizer. Caption statistics and the toy text backends both run
// on top of this; production tokenizers can be swapped in behind it.
class Tokenizer {
public:
    virtual ~Tokenizer() = default;
    virtual std::vector<std::string> tokenize(const std::string& text) const = 0;
    virtual std::string name() const = 0;
};

// Splits on ASCII whitespace, keeps punctuation attached to words.
class WhitespaceTokenizer : public Tokenizer {
public:
    std::vector<std::string> tokenize(const std::string& text) const override;
    std::string name() const override { return "whitespace"; }
};

std::shared_ptr<const Tokenizer> default_tokenizer();

}  // namespace pclip
