#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tcmrag {

/// One structured clinical case.
struct ClinicalCase {
    std::string case_id;
    std::string patient_background;
    std::string clinical_info;  ///< chief complaint, symptoms, tongue and pulse
    std::string pathogenesis;
    std::vector<std::string> syndromes;
    std::string doctor_notes;
    std::string source;
    std::string raw_text;

    bool operator==(const ClinicalCase&) const = default;
};

/// Half-open range of Unicode scalar value offsets.
struct CharSpan {
    std::size_t start = 0;
    std::size_t end = 0;

    std::size_t size() const noexcept { return end - start; }
    bool operator==(const CharSpan&) const = default;
};

/// A segmented word together with its position in the source text.
struct Token {
    std::string text;
    CharSpan span;

    bool operator==(const Token&) const = default;
};

enum class ChunkStrategy { kOverlapWindow, kTokenChunk };

std::string_view to_string(ChunkStrategy strategy);
/// Accepts "overlap_window" and "token_chunk"; throws ConfigError otherwise.
ChunkStrategy parse_strategy(std::string_view name);

/// A retrievable span of a case document. `span` indexes into the
/// rendered document of the parent case (see case_document()).
struct Chunk {
    std::string chunk_id;  ///< case_id + "#" + ordinal
    std::string case_id;
    std::string text;
    CharSpan span;
    ChunkStrategy strategy = ChunkStrategy::kOverlapWindow;
    std::size_t token_count = 0;

    bool operator==(const Chunk&) const = default;
};

struct ChunkingParams {
    std::size_t window = 512;
    std::size_t overlap = 128;
    std::size_t max_tokens = 256;
    std::size_t overlap_tokens = 32;
    std::size_t snap_lookback = 16;
};

/// Throws ParseError when a case breaks the corpus invariants.
void validate_case(const ClinicalCase& c);

std::vector<ClinicalCase> read_corpus(std::istream& in);
std::vector<ClinicalCase> load_corpus(const std::filesystem::path& path);
void write_corpus(std::ostream& out, std::span<const ClinicalCase> cases);
std::string case_to_json_line(const ClinicalCase& c);

/// Drops control characters, folds full-width ASCII to half-width and
/// collapses every whitespace run to a single space. Idempotent.
std::string normalize_text(std::string_view raw);

/// The text a case contributes to the retrieval index: labelled fields,
/// one per line, empty fields omitted.
std::string case_document(const ClinicalCase& c);

/// Fixed character windows with `overlap` characters shared between
/// neighbours. Throws ConfigError unless 0 <= overlap < window.
std::vector<Chunk> chunk_overlap(std::string_view case_id, std::string_view text, std::size_t window,
                                 std::size_t overlap);

/// Windows of at most `max_tokens` whole tokens. A tentative boundary is
/// pulled back to just after the last sentence-final punctuation token
/// found among its `snap_lookback` preceding tokens.
std::vector<Chunk> chunk_by_tokens(std::string_view case_id, std::string_view text,
                                   std::span<const Token> tokens, std::size_t max_tokens,
                                   std::size_t overlap_tokens, std::size_t snap_lookback = 16);

std::vector<Chunk> read_chunks(std::istream& in);
void write_chunks(std::ostream& out, std::span<const Chunk> chunks);

/// Parent case id of a chunk id ("c7#2" -> "c7").
std::string parent_case_id(std::string_view chunk_id);

}  // namespace tcmrag
