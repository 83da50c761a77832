#include "tcmrag/index_bundle.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "tcmrag/error.hpp"
#include "tcmrag/segment.hpp"

namespace tcmrag {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::set<std::string> tokens_within(std::span<const Token> tokens, CharSpan span) {
    std::vector<Token> inside;
    for (const auto& t : tokens) {
        if (t.span.start >= span.start && t.span.end <= span.end) inside.push_back(t);
    }
    return token_set(inside);
}

json read_manifest(const fs::path& dir) {
    const auto path = dir / IndexBundle::kManifestFile;
    std::ifstream in(path);
    if (!in) throw ConfigError(fmt::format("index directory {} has no {}", dir.string(), IndexBundle::kManifestFile));
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

}  // namespace

IndexBundle build_index(std::span<const ClinicalCase> corpus, ChunkStrategy strategy, const ChunkingParams& params,
                        const Segmenter& segmenter, EmbeddingProvider& embedder) {
    IndexBundle b;
    b.strategy_ = strategy;
    b.embedder_ = embedder.name();
    b.cases_.assign(corpus.begin(), corpus.end());

    std::vector<std::set<std::string>> keyword_sets;
    for (const auto& c : corpus) {
        if (strategy == ChunkStrategy::kOverlapWindow) {
            for (auto& ch : chunk_overlap(c.case_id, case_document(c), params.window, params.overlap)) {
                const auto seg = segmenter.cut(ch.text);
                ch.token_count = seg.tokens.size();
                keyword_sets.push_back(token_set(seg));
                b.chunks_.push_back(std::move(ch));
            }
        } else {
            const std::string doc = case_document(c);
            const auto seg = segmenter.cut(doc);
            for (auto& ch : chunk_by_tokens(c.case_id, doc, seg.tokens, params.max_tokens, params.overlap_tokens,
                                            params.snap_lookback)) {
                keyword_sets.push_back(tokens_within(seg.tokens, ch.span));
                b.chunks_.push_back(std::move(ch));
            }
        }
    }

    std::vector<std::string> texts;
    texts.reserve(b.chunks_.size());
    for (const auto& ch : b.chunks_) texts.push_back(ch.text);
    auto vectors = embed_all(texts, embedder);
    for (std::size_t i = 0; i < b.chunks_.size(); ++i) {
        b.dense_.add(b.chunks_[i].chunk_id, std::move(vectors[i]));
        b.sparse_.add(b.chunks_[i].chunk_id, std::move(keyword_sets[i]));
    }
    b.link();
    return b;
}

void IndexBundle::link() {
    by_id_.clear();
    case_by_id_.clear();
    for (std::size_t i = 0; i < chunks_.size(); ++i) {
        if (!by_id_.emplace(chunks_[i].chunk_id, i).second) {
            throw ConfigError(fmt::format("duplicate chunk id {}", chunks_[i].chunk_id));
        }
    }
    for (std::size_t i = 0; i < cases_.size(); ++i) case_by_id_.emplace(cases_[i].case_id, i);
}

const Chunk* IndexBundle::chunk(std::string_view chunk_id) const {
    const auto it = by_id_.find(std::string(chunk_id));
    return it == by_id_.end() ? nullptr : &chunks_[it->second];
}

const ClinicalCase* IndexBundle::find_case(std::string_view case_id) const {
    const auto it = case_by_id_.find(std::string(case_id));
    return it == case_by_id_.end() ? nullptr : &cases_[it->second];
}

std::vector<fs::path> IndexBundle::save(const fs::path& dir) const {
    fs::create_directories(dir);
    std::vector<fs::path> written;

    const auto vec_path = dir / kVectorFile;
    dense_.save(vec_path);
    written.push_back(vec_path);

    const auto kw_path = dir / kKeywordFile;
    sparse_.save(kw_path);
    written.push_back(kw_path);

    const auto chunk_path = dir / kChunkFile;
    {
        std::ofstream out(chunk_path, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(fmt::format("cannot write {}", chunk_path.string()));
        write_chunks(out, chunks_);
        if (!out) throw Error(fmt::format("write failed: {}", chunk_path.string()));
    }
    written.push_back(chunk_path);

    const auto case_path = dir / kCaseFile;
    {
        std::ofstream out(case_path, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(fmt::format("cannot write {}", case_path.string()));
        write_corpus(out, cases_);
        if (!out) throw Error(fmt::format("write failed: {}", case_path.string()));
    }
    written.push_back(case_path);

    json manifest;
    manifest["version"] = kVersion;
    manifest["strategy"] = std::string(to_string(strategy_));
    manifest["embedder"] = embedder_;
    manifest["dim"] = dense_.dim();
    manifest["chunks"] = chunks_.size();
    manifest["cases"] = cases_.size();
    const auto man_path = dir / kManifestFile;
    {
        std::ofstream out(man_path, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(fmt::format("cannot write {}", man_path.string()));
        out << manifest.dump(2) << '\n';
        if (!out) throw Error(fmt::format("write failed: {}", man_path.string()));
    }
    written.push_back(man_path);
    return written;
}

ChunkStrategy IndexBundle::read_strategy(const fs::path& dir) {
    const auto manifest = read_manifest(dir);
    if (!manifest.contains("strategy") || !manifest["strategy"].is_string()) {
        throw ConfigError(fmt::format("{}: manifest lacks a strategy", dir.string()));
    }
    return parse_strategy(manifest["strategy"].get<std::string>());
}

IndexBundle IndexBundle::load(const fs::path& dir) {
    const auto manifest = read_manifest(dir);
    IndexBundle b;
    try {
        if (manifest.at("version").get<int>() != kVersion) {
            throw ConfigError(fmt::format("{}: unsupported index version {}", dir.string(),
                                          manifest.at("version").get<int>()));
        }
        b.strategy_ = parse_strategy(manifest.at("strategy").get<std::string>());
        b.embedder_ = manifest.at("embedder").get<std::string>();
    } catch (const json::exception& e) {
        throw ConfigError(fmt::format("{}: bad manifest: {}", dir.string(), e.what()));
    }

    for (auto name : {kVectorFile, kKeywordFile, kChunkFile, kCaseFile}) {
        if (!fs::exists(dir / name)) throw ConfigError(fmt::format("index directory {} has no {}", dir.string(), name));
    }
    b.dense_ = VectorIndex::load(dir / kVectorFile);
    b.sparse_ = KeywordIndex::load(dir / kKeywordFile);
    {
        std::ifstream in(dir / kChunkFile, std::ios::binary);
        b.chunks_ = read_chunks(in);
    }
    b.cases_ = load_corpus(dir / kCaseFile);
    b.link();

    if (b.dense_.size() != b.chunks_.size() || b.sparse_.size() != b.chunks_.size()) {
        throw ConfigError(fmt::format("{}: index sizes disagree ({} vectors, {} keyword sets, {} chunks)",
                                      dir.string(), b.dense_.size(), b.sparse_.size(), b.chunks_.size()));
    }
    for (const auto& ch : b.chunks_) {
        if (ch.strategy != b.strategy_) {
            throw ConfigError(fmt::format("{}: chunk {} was built with {}, manifest says {}", dir.string(),
                                          ch.chunk_id, to_string(ch.strategy), to_string(b.strategy_)));
        }
        if (!b.dense_.find(ch.chunk_id) || !b.sparse_.tokens(ch.chunk_id)) {
            throw ConfigError(fmt::format("{}: chunk {} is missing from an index", dir.string(), ch.chunk_id));
        }
        if (!b.find_case(ch.case_id)) {
            throw ConfigError(fmt::format("{}: chunk {} has no source case", dir.string(), ch.chunk_id));
        }
    }
    if (manifest.contains("dim") && manifest["dim"].get<std::size_t>() != b.dense_.dim()) {
        throw ConfigError(fmt::format("{}: manifest dim {} but vectors have {}", dir.string(),
                                      manifest["dim"].get<std::size_t>(), b.dense_.dim()));
    }
    return b;
}

}  // namespace tcmrag
