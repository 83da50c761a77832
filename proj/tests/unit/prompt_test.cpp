#include <tcmrag/error.hpp>
#include <tcmrag/prompt.hpp>
#include <tcmrag/task.hpp>
#include <tcmrag/utf8.hpp>

#include <gtest/gtest.h>

#include <random>

#include "test_data.hpp"

using namespace tcmrag;

namespace {

const PromptTemplates& templates() {
    static const auto t = PromptTemplates::load(testdata::data("templates"));
    return t;
}

const TaskItem& item() {
    static const auto items = load_tasks(testdata::data("tasks.jsonl"));
    return items.front();
}

ClinicalCase demo_case() {
    ClinicalCase c;
    c.case_id = "c99";
    c.clinical_info = "胃脘痞满，食少纳呆，舌淡苔白，脉缓弱。";
    c.pathogenesis = "脾胃虚弱，运化失职。";
    c.syndromes = {"脾胃虚弱证"};
    return c;
}

std::vector<ContextBlock> three_blocks() {
    return {{"c01#0", "胃脘胀痛，连及两胁。"}, {"c02#0", "嗳气频作，情志不畅。"}, {"c03#0", "口苦咽干，脉弦数。"}};
}

std::size_t count(std::string_view hay, std::string_view needle) {
    std::size_t n = 0;
    for (auto p = hay.find(needle); p != std::string_view::npos; p = hay.find(needle, p + needle.size())) ++n;
    return n;
}

std::size_t prompt_length(const PromptBundle& b) { return utf8::length(b.system_text) + utf8::length(b.user_text); }

}  // namespace

TEST(Prompt, BaseHasNoStepsOrContext) {
    const auto b = build_prompt(templates(), item(), PromptVariant::kBase, {}, std::nullopt);
    for (auto h : kCotStepHeaders) EXPECT_EQ(b.user_text.find(h), std::string::npos);
    EXPECT_EQ(b.user_text.find("[CONTEXT"), std::string::npos);
    EXPECT_EQ(b.user_text.find("[DEMONSTRATION"), std::string::npos);
    EXPECT_NE(b.user_text.find(item().case_text), std::string::npos);
    EXPECT_EQ(b.system_text, templates().system_text());
}

TEST(Prompt, RagCotHasHeadersAndNumberedBlocks) {
    const auto blocks = three_blocks();
    const auto b = build_prompt(templates(), item(), PromptVariant::kRagCot, blocks, std::nullopt);
    std::size_t last = 0;
    for (auto h : kCotStepHeaders) {
        const auto p = b.user_text.find(h);
        ASSERT_NE(p, std::string::npos) << h;
        EXPECT_GT(p, last);
        last = p;
    }
    for (int i = 1; i <= 3; ++i) {
        EXPECT_EQ(count(b.user_text, "[CONTEXT " + std::to_string(i) + " | "), 1u);
    }
    EXPECT_EQ(b.context_blocks, blocks);
}

TEST(Prompt, OptionsAppearOnceAsNumberedLines) {
    const auto b = build_prompt(templates(), item(), PromptVariant::kCot, {}, std::nullopt);
    for (std::size_t i = 0; i < item().pathogenesis_options.size(); ++i) {
        const auto line = std::to_string(i + 1) + ". " + item().pathogenesis_options[i] + "\n";
        EXPECT_EQ(count(b.user_text, line), 1u) << line;
        EXPECT_EQ(count(b.user_text, item().pathogenesis_options[i]), 1u);
    }
    for (const auto& o : item().syndrome_options) EXPECT_EQ(count(b.user_text, o), 1u) << o;
}

TEST(Prompt, VariantsDifferOnlyInTheirSections) {
    const auto blocks = three_blocks();
    const auto base = build_prompt(templates(), item(), PromptVariant::kBase, {}, std::nullopt).user_text;
    const auto cot = build_prompt(templates(), item(), PromptVariant::kCot, {}, std::nullopt).user_text;
    const auto rag = build_prompt(templates(), item(), PromptVariant::kRag, blocks, demo_case()).user_text;
    const auto rag_cot = build_prompt(templates(), item(), PromptVariant::kRagCot, blocks, demo_case()).user_text;

    const auto p = base.find(kOutputFormatMarker);
    const auto q = cot.find(kOutputFormatMarker);
    ASSERT_NE(p, std::string::npos);
    ASSERT_NE(q, std::string::npos);
    EXPECT_EQ(cot.substr(0, p) + cot.substr(q), base);
    const auto steps = cot.substr(p, q - p);
    for (auto h : kCotStepHeaders) EXPECT_NE(steps.find(h), std::string::npos);

    ASSERT_TRUE(rag.ends_with(base));
    const auto rag_prefix = rag.substr(0, rag.size() - base.size());
    EXPECT_TRUE(rag_prefix.starts_with("[DEMONSTRATION | c99]"));
    EXPECT_NE(rag_prefix.find("[CONTEXT 3 | c03#0]"), std::string::npos);
    EXPECT_TRUE(rag_cot.ends_with(cot));
    EXPECT_EQ(rag_cot.substr(0, rag_cot.size() - cot.size()), rag_prefix);
}

TEST(Prompt, TruncationDropsDemonstrationThenLastBlocks) {
    const auto blocks = three_blocks();
    const auto full = build_prompt(templates(), item(), PromptVariant::kRag, blocks, demo_case(), 100000);
    ASSERT_TRUE(full.demonstration.has_value());
    const auto no_demo = build_prompt(templates(), item(), PromptVariant::kRag, blocks, std::nullopt, 100000);
    const std::size_t fits_blocks = prompt_length(no_demo);
    ASSERT_LT(fits_blocks, prompt_length(full));

    const auto b = build_prompt(templates(), item(), PromptVariant::kRag, blocks, demo_case(), fits_blocks);
    EXPECT_FALSE(b.demonstration.has_value());
    EXPECT_EQ(b.context_blocks.size(), 3u);
    EXPECT_EQ(b.user_text.find("[DEMONSTRATION"), std::string::npos);
    ASSERT_EQ(b.notes.size(), 1u);
    EXPECT_LE(prompt_length(b), fits_blocks);

    const auto c = build_prompt(templates(), item(), PromptVariant::kRag, blocks, demo_case(), fits_blocks - 1);
    ASSERT_EQ(c.context_blocks.size(), 2u);
    EXPECT_EQ(c.context_blocks.back().chunk_id, "c02#0");
    EXPECT_EQ(c.notes.size(), 2u);

    EXPECT_THROW(build_prompt(templates(), item(), PromptVariant::kRag, blocks, demo_case(), 50), Error);
}

TEST(Prompt, RagWithoutMaterialIsAConfigError) {
    EXPECT_THROW(build_prompt(templates(), item(), PromptVariant::kRag, {}, std::nullopt), ConfigError);
}

TEST(Prompt, TemplateValidation) {
    const std::map<PromptVariant, std::string> ok = {
        {PromptVariant::kBase, "[CASE]{{case}}{{options_pathogenesis}}{{options_syndromes}}[OUTPUT FORMAT]"},
        {PromptVariant::kCot,
         "[CASE]{{case}}{{options_pathogenesis}}{{options_syndromes}}[STEP 1] Extract clinical features "
         "[STEP 2] Infer pathogenesis [STEP 3] Determine syndromes [OUTPUT FORMAT]"},
        {PromptVariant::kRag,
         "{{demonstration}}{{context}}[CASE]{{case}}{{options_pathogenesis}}{{options_syndromes}}[OUTPUT FORMAT]"},
        {PromptVariant::kRagCot,
         "{{demonstration}}{{context}}[CASE]{{case}}{{options_pathogenesis}}{{options_syndromes}}"
         "[STEP 1] Extract clinical features [STEP 2] Infer pathogenesis [STEP 3] Determine syndromes "
         "[OUTPUT FORMAT]"},
    };
    EXPECT_NO_THROW(PromptTemplates::from_strings("sys", ok));

    auto unknown = ok;
    unknown[PromptVariant::kBase] += "{{patient_name}}";
    EXPECT_THROW(PromptTemplates::from_strings("sys", unknown), ConfigError);

    auto no_steps = ok;
    no_steps[PromptVariant::kCot] = ok.at(PromptVariant::kBase);
    EXPECT_THROW(PromptTemplates::from_strings("sys", no_steps), ConfigError);

    auto context_in_base = ok;
    context_in_base[PromptVariant::kBase] += "{{context}}";
    EXPECT_THROW(PromptTemplates::from_strings("sys", context_in_base), ConfigError);

    auto missing = ok;
    missing.erase(PromptVariant::kRag);
    EXPECT_THROW(PromptTemplates::from_strings("sys", missing), ConfigError);

    EXPECT_THROW(PromptTemplates::load(testdata::data("no-such-dir")), ConfigError);
}

TEST(Prompt, SubstitutedValuesAreNotRescanned) {
    auto t = item();
    t.case_text = "患者自述{{context}}字样";
    const auto b = build_prompt(templates(), t, PromptVariant::kBase, {}, std::nullopt);
    EXPECT_NE(b.user_text.find("患者自述{{context}}字样"), std::string::npos);
}

TEST(AnswerParse, WellFormedAndFenced) {
    const std::string p = item().pathogenesis_options[0], s = item().syndrome_options[0];
    const std::string obj = R"({"clinical_features":["f"],"pathogenesis":[")" + p + R"("],"syndromes":[")" + s +
                            R"("],"reasoning":"r"})";
    const auto a = parse_answer(obj, item());
    EXPECT_EQ(a.answer.pathogenesis, std::vector<std::string>{p});
    EXPECT_EQ(a.answer.syndromes, std::vector<std::string>{s});
    EXPECT_EQ(a.answer.clinical_features, std::vector<std::string>{"f"});
    EXPECT_EQ(a.answer.reasoning, "r");
    EXPECT_TRUE(a.warnings.empty());

    const auto fenced = parse_answer("好的，结果如下：\n```json\n" + obj + "\n```\n以上。", item());
    EXPECT_EQ(fenced.answer, a.answer);
}

TEST(AnswerParse, DropsSelectionsOutsideOptions) {
    const std::string p = item().pathogenesis_options[0];
    const auto a = parse_answer(R"({"clinical_features":[],"pathogenesis":[")" + p +
                                    R"(","NOT_AN_OPTION"],"syndromes":[],"reasoning":""})",
                                item());
    EXPECT_EQ(a.answer.pathogenesis, std::vector<std::string>{p});
    EXPECT_EQ(a.warnings.size(), 1u);
}

TEST(AnswerParse, Errors) {
    auto kind_of = [](const std::string& raw) {
        try {
            parse_answer(raw, item());
        } catch (const AnswerError& e) {
            return static_cast<int>(e.kind());
        }
        return -1;
    };
    EXPECT_EQ(kind_of("我认为是肝气郁结"), static_cast<int>(AnswerError::Kind::kNoJson));
    EXPECT_EQ(kind_of(R"({"pathogenesis":[],"syndromes":[],"clinical_features":[]})"),
              static_cast<int>(AnswerError::Kind::kSchema));
    EXPECT_EQ(kind_of(R"({"pathogenesis":"x","syndromes":[],"clinical_features":[],"reasoning":""})"),
              static_cast<int>(AnswerError::Kind::kSchema));
}

TEST(AnswerParse, RoundTripAndContainment) {
    std::mt19937 rng(21);
    const auto& it = item();
    for (int round = 0; round < 300; ++round) {
        Answer a;
        for (const auto& o : it.pathogenesis_options) {
            if (rng() % 2) a.pathogenesis.push_back(o);
        }
        for (const auto& o : it.syndrome_options) {
            if (rng() % 2) a.syndromes.push_back(o);
        }
        for (int k = static_cast<int>(rng() % 3); k > 0; --k) a.clinical_features.push_back("特征\"" + std::to_string(k));
        a.reasoning = round % 2 ? "理由\n第二行" : "";
        const auto once = serialize_answer(a);
        const auto parsed = parse_answer(once, it);
        EXPECT_EQ(parsed.answer, a);
        EXPECT_EQ(serialize_answer(parsed.answer), once);

        Answer noisy = a;
        noisy.pathogenesis.push_back("不在选项中");
        noisy.syndromes.push_back(it.pathogenesis_options[0]);
        const auto filtered = parse_answer(serialize_answer(noisy), it).answer;
        for (const auto& x : filtered.pathogenesis) {
            EXPECT_NE(std::find(it.pathogenesis_options.begin(), it.pathogenesis_options.end(), x),
                      it.pathogenesis_options.end());
        }
        for (const auto& x : filtered.syndromes) {
            EXPECT_NE(std::find(it.syndrome_options.begin(), it.syndrome_options.end(), x),
                      it.syndrome_options.end());
        }
    }
}

TEST(AnswerParse, SerializedKeyOrder) {
    Answer a{{"f"}, {"p"}, {"s"}, "r"};
    EXPECT_EQ(serialize_answer(a), R"({"clinical_features":["f"],"pathogenesis":["p"],"syndromes":["s"],"reasoning":"r"})");
}

TEST(ExtractJson, FindsFirstBalancedValue) {
    EXPECT_EQ(extract_json(R"(x {"a": "}"} y {"b":1})", '{'), std::optional<std::string>(R"({"a": "}"})"));
    EXPECT_EQ(extract_json("[1, [2]] tail", '['), std::optional<std::string>("[1, [2]]"));
    EXPECT_FALSE(extract_json("{broken", '{').has_value());
    EXPECT_EQ(extract_json("{oops} then {\"ok\":true}", '{'), std::optional<std::string>("{\"ok\":true}"));
}

TEST(Tasks, LoadAndValidate) {
    const auto items = load_tasks(testdata::data("tasks.jsonl"));
    EXPECT_EQ(items.size(), 20u);
    auto bad = items.front();
    bad.gold_syndromes = {"X"};
    try {
        validate_task(bad);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find(bad.item_id), std::string::npos);
    }
    auto dup = items.front();
    dup.pathogenesis_options.push_back(dup.pathogenesis_options.front());
    EXPECT_THROW(validate_task(dup), ParseError);
}
