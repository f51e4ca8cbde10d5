#include "pclip/tokenizer.hpp"

namespace pclip {

std::vector<std::string> WhitespaceTokenizer::tokenize(const std::string& text) const {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r') {
            if (!cur.empty()) {
                out.push_back(cur);
                cur.clear();
            }
        } else {
            cur.push_back(ch);
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

std::shared_ptr<const Tokenizer> default_tokenizer() {
    static auto tok = std::make_shared<WhitespaceTokenizer>();
    return tok;
}

}  // namespace pclip
