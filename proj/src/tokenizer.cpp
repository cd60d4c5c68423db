#include "fullanno/tokenizer.hpp"

#include <cctype>
#include <cstdio>
#include <limits>

#include "fullanno/errors.hpp"
#include "fullanno/ingestion.hpp"
#include "json.hpp"

namespace fullanno {

std::int64_t WhitespaceTokenizer::count(std::string_view text) const {
    std::int64_t n = 0;
    bool in_token = false;
    for (char c : text) {
        const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
        if (!space && !in_token) ++n;
        in_token = !space;
    }
    return n;
}

namespace {

constexpr std::string_view kWordBoundary = "\xE2\x96\x81";  // U+2581

std::size_t utf8_length(unsigned char lead) {
    if (lead < 0x80) return 1;
    if ((lead >> 5) == 0x6) return 2;
    if ((lead >> 4) == 0xE) return 3;
    if ((lead >> 3) == 0x1E) return 4;
    return 1;
}

std::vector<std::string> split_chars(std::string_view s) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < s.size();) {
        std::size_t n = std::min(utf8_length(static_cast<unsigned char>(s[i])), s.size() - i);
        out.emplace_back(s.substr(i, n));
        i += n;
    }
    return out;
}

}  // namespace

BpeTokenizer::BpeTokenizer(std::string name, std::map<std::string, std::int64_t> vocab,
                           std::vector<std::pair<std::string, std::string>> merges)
    : id_(std::move(name)), vocab_(std::move(vocab)) {
    for (std::size_t i = 0; i < merges.size(); ++i) {
        merge_rank_.emplace(std::move(merges[i]), i);
    }
}

BpeTokenizer BpeTokenizer::from_file(const std::filesystem::path& path) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("$", std::string("invalid tokenizer JSON: ") + e.what());
    }
    const nlohmann::json& model = doc.contains("model") ? doc["model"] : doc;
    if (!model.contains("vocab") || !model["vocab"].is_object()) {
        throw SchemaError("$.model.vocab", "expected an object");
    }
    if (!model.contains("merges") || !model["merges"].is_array()) {
        throw SchemaError("$.model.merges", "expected an array");
    }
    std::map<std::string, std::int64_t> vocab;
    for (const auto& [piece, id] : model["vocab"].items()) {
        vocab.emplace(piece, id.is_number_integer() ? id.get<std::int64_t>() : 0);
    }
    std::vector<std::pair<std::string, std::string>> merges;
    std::size_t i = 0;
    for (const auto& m : model["merges"]) {
        const std::string at = "$.model.merges[" + std::to_string(i++) + "]";
        if (m.is_string()) {
            const std::string s = m.get<std::string>();
            const auto space = s.find(' ');
            if (space == std::string::npos) throw SchemaError(at, "merge without a space");
            merges.emplace_back(s.substr(0, space), s.substr(space + 1));
        } else if (m.is_array() && m.size() == 2 && m[0].is_string() && m[1].is_string()) {
            merges.emplace_back(m[0].get<std::string>(), m[1].get<std::string>());
        } else {
            throw SchemaError(at, "expected \"left right\" or [left, right]");
        }
    }
    return BpeTokenizer("bpe:" + path.string(), std::move(vocab), std::move(merges));
}

std::vector<std::string> BpeTokenizer::encode(std::string_view text) const {
    std::string normalized(kWordBoundary);
    for (char c : text) {
        if (c == ' ') {
            normalized += kWordBoundary;
        } else {
            normalized.push_back(c);
        }
    }
    std::vector<std::string> pieces = split_chars(normalized);

    while (pieces.size() > 1) {
        std::size_t best_rank = std::numeric_limits<std::size_t>::max();
        std::size_t best_at = 0;
        for (std::size_t i = 0; i + 1 < pieces.size(); ++i) {
            auto it = merge_rank_.find({pieces[i], pieces[i + 1]});
            if (it != merge_rank_.end() && it->second < best_rank) {
                best_rank = it->second;
                best_at = i;
            }
        }
        if (best_rank == std::numeric_limits<std::size_t>::max()) break;
        pieces[best_at] += pieces[best_at + 1];
        pieces.erase(pieces.begin() + static_cast<std::ptrdiff_t>(best_at) + 1);
    }

    std::vector<std::string> out;
    for (auto& p : pieces) {
        if (vocab_.count(p)) {
            out.push_back(std::move(p));
        } else {
            for (unsigned char byte : p) {
                char buf[8];
                std::snprintf(buf, sizeof buf, "<0x%02X>", byte);
                out.emplace_back(buf);
            }
        }
    }
    return out;
}

std::int64_t BpeTokenizer::count(std::string_view text) const {
    if (text.empty()) return 0;
    return static_cast<std::int64_t>(encode(text).size());
}

std::shared_ptr<const Tokenizer> make_tokenizer(const std::string& spec) {
    if (spec == "whitespace") return std::make_shared<WhitespaceTokenizer>();
    if (spec.rfind("bpe:", 0) == 0) {
        return std::make_shared<BpeTokenizer>(BpeTokenizer::from_file(spec.substr(4)));
    }
    throw ConfigError("unknown tokenizer: " + spec);
}

}  // namespace fullanno
