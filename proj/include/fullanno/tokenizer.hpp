#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace fullanno {

/// Counts tokens for token-length bookkeeping. Implementations must be
/// deterministic and safe to call from several threads at once.
class Tokenizer {
public:
    virtual ~Tokenizer() = default;
    virtual std::string id() const = 0;
    virtual std::int64_t count(std::string_view text) const = 0;
};

/// Splits on ASCII whitespace.
class WhitespaceTokenizer final : public Tokenizer {
public:
    std::string id() const override { return "whitespace"; }
    std::int64_t count(std::string_view text) const override;
};

/// Byte-pair-encoding token counter driven by a vocabulary file.
///
/// The file is a JSON object with a `model` member holding `vocab`
/// (piece -> id) and `merges` (list of "left right" strings, highest
/// priority first), which is the layout of a Hugging Face `tokenizer.json`.
/// Text is pre-split SentencePiece style: spaces become U+2581 and a leading
/// U+2581 is prepended. Pieces are then merged by rank; a character absent
/// from the vocabulary counts as one token per UTF-8 byte (byte fallback).
class BpeTokenizer final : public Tokenizer {
public:
    static BpeTokenizer from_file(const std::filesystem::path& path);
    BpeTokenizer(std::string name, std::map<std::string, std::int64_t> vocab,
                 std::vector<std::pair<std::string, std::string>> merges);

    std::string id() const override { return id_; }
    std::int64_t count(std::string_view text) const override;
    std::vector<std::string> encode(std::string_view text) const;

private:
    std::string id_;
    std::map<std::string, std::int64_t> vocab_;
    std::map<std::pair<std::string, std::string>, std::size_t> merge_rank_;
};

/// Builds a tokenizer from an id: "whitespace" or "bpe:<path to vocab json>".
std::shared_ptr<const Tokenizer> make_tokenizer(const std::string& spec);

}  // namespace fullanno
