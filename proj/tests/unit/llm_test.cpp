#include <tcmrag/corpus.hpp>
#include <tcmrag/error.hpp>
#include <tcmrag/llm.hpp>
#include <tcmrag/task.hpp>

#include <gtest/gtest.h>

#include <deque>

#include "test_data.hpp"

using namespace tcmrag;

namespace {

/// Replies from a queue and records every request.
class ScriptedChat final : public ChatProvider {
public:
    std::deque<ChatResponse> replies;
    std::vector<std::vector<ChatMessage>> seen;

    ChatResponse chat(std::span<const ChatMessage> messages, const GenerationParams&) override {
        seen.emplace_back(messages.begin(), messages.end());
        if (replies.empty()) throw ProviderError("script exhausted");
        auto r = replies.front();
        replies.pop_front();
        return r;
    }
    std::string name() const override { return "scripted"; }
};

const TaskItem& item() {
    static const auto items = load_tasks(testdata::data("tasks.jsonl"));
    return items.front();
}

std::string valid_answer() {
    return R"({"clinical_features":["胃痛"],"pathogenesis":[")" + item().pathogenesis_options[0] +
           R"("],"syndromes":[")" + item().syndrome_options[0] + R"("],"reasoning":"r"})";
}

PromptBundle bundle() {
    PromptBundle b;
    b.system_text = "sys";
    b.user_text = "user";
    return b;
}

}  // namespace

TEST(MockChat, DigestThenRulesThenDefault) {
    const std::vector<ChatMessage> msgs = {{"system", "s"}, {"user", "病例甲"}};
    MockChatProvider mock;
    mock.add_response(messages_digest(msgs), "exact");
    mock.add_rule({{"病例乙", "s"}, "rule"});
    EXPECT_EQ(mock.chat(msgs, {}).text, "exact");

    const std::vector<ChatMessage> other = {{"system", "s"}, {"user", "病例乙"}};
    EXPECT_EQ(mock.chat(other, {}).text, "rule");

    const std::vector<ChatMessage> unknown = {{"user", "病例丙"}};
    EXPECT_THROW(mock.chat(unknown, {}), ProviderError);
    mock.set_default("fallback");
    EXPECT_EQ(mock.chat(unknown, {}).text, "fallback");
    EXPECT_EQ(mock.requests(), 4u);
}

TEST(MockChat, DigestIsSha256OfCanonicalJson) {
    const std::vector<ChatMessage> msgs = {{"user", "hi"}};
    EXPECT_EQ(serialize_messages(msgs), R"([{"role":"user","content":"hi"}])");
    EXPECT_EQ(messages_digest(msgs), sha256_hex(R"([{"role":"user","content":"hi"}])"));
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(MockChat, FileFormats) {
    const std::vector<ChatMessage> msgs = {{"user", "hi"}};
    const auto flat = MockChatProvider::parse(R"({")" + messages_digest(msgs) + R"(": "hello"})");
    auto flat_copy = MockChatProvider::parse(flat.to_json());
    EXPECT_EQ(flat_copy.chat(msgs, {}).text, "hello");

    auto full = MockChatProvider::parse(
        R"({"responses": {}, "rules": [{"contains": ["h"], "response": "r"}], "default": "d"})");
    EXPECT_EQ(full.chat(msgs, {}).text, "r");
    const std::vector<ChatMessage> x = {{"user", "x"}};
    EXPECT_EQ(full.chat(x, {}).text, "d");

    EXPECT_THROW(MockChatProvider::parse("[1]"), ParseError);
    EXPECT_THROW(MockChatProvider::parse(R"({"rules": [], "extra": 1})"), ParseError);
    EXPECT_THROW(MockChatProvider::load(testdata::data("mocks/absent.json")), ConfigError);
    EXPECT_NO_THROW(MockChatProvider::load(testdata::data("mocks/echo_gold.json")));
}

TEST(Complete, SurfacesTruncation) {
    ScriptedChat chat;
    chat.replies = {{"partial", "length"}, {"whole", "stop"}};
    const std::vector<ChatMessage> msgs = {{"user", "q"}};
    auto c = complete(chat, msgs, {});
    EXPECT_EQ(c.text, "partial");
    ASSERT_EQ(c.warnings.size(), 1u);
    EXPECT_NE(c.warnings[0].find("truncated"), std::string::npos);
    EXPECT_TRUE(complete(chat, msgs, {}).warnings.empty());
    EXPECT_THROW(complete(chat, std::vector<ChatMessage>{}, {}), ConfigError);
    EXPECT_THROW(complete(chat, std::vector<ChatMessage>{{"assistant", "x"}}, {}), ConfigError);
}

TEST(SplitCases, ReturnsPieces) {
    ScriptedChat chat;
    chat.replies = {{R"(["case A","case B"])", "stop"}};
    EXPECT_EQ(split_cases(chat, "case A case B"), (std::vector<std::string>{"case A", "case B"}));
    EXPECT_EQ(chat.seen.size(), 1u);
}

TEST(SplitCases, OneRepairThenError) {
    ScriptedChat chat;
    chat.replies = {{"这里有两个医案。", "stop"}, {"还是散文。", "stop"}};
    EXPECT_THROW(split_cases(chat, "case A case B"), AnswerError);
    ASSERT_EQ(chat.seen.size(), 2u);
    EXPECT_GT(chat.seen[1].back().content.size(), chat.seen[0].back().content.size());
    EXPECT_TRUE(chat.seen[1].back().content.starts_with(chat.seen[0].back().content));

    ScriptedChat recovers;
    recovers.replies = {{"oops", "stop"}, {R"(["case A case B"])", "stop"}};
    EXPECT_EQ(split_cases(recovers, "case A case B").size(), 1u);
}

TEST(SplitCases, CoverageGuard) {
    ScriptedChat chat;
    chat.replies = {{R"(["abcd"])", "stop"}};
    EXPECT_THROW(split_cases(chat, "abcdefghij"), Error);
    EXPECT_DOUBLE_EQ(split_coverage("abcdefghij", std::vector<std::string>{"abcd"}), 0.4);
    EXPECT_DOUBLE_EQ(split_coverage("a b", std::vector<std::string>{"ba"}), 1.0);
}

TEST(ExtractFields, PopulatesCase) {
    ScriptedChat chat;
    chat.replies = {{R"({"patient_background":"男，45岁","clinical_info":"胃痛","pathogenesis":"肝郁",)"
                     R"("syndromes":["肝胃不和证"],"doctor_notes":"疏肝"})",
                     "stop"}};
    const auto c = extract_fields(chat, "原始医案");
    EXPECT_TRUE(c.case_id.empty());
    EXPECT_EQ(c.patient_background, normalize_text("男，45岁"));
    EXPECT_EQ(c.clinical_info, "胃痛");
    EXPECT_EQ(c.syndromes, std::vector<std::string>{"肝胃不和证"});
    EXPECT_EQ(c.doctor_notes, "疏肝");
}

TEST(ExtractFields, OptionalAndRequiredFields) {
    ScriptedChat chat;
    chat.replies = {{R"({"clinical_info":"胃痛","syndromes":[]})", "stop"}};
    EXPECT_TRUE(extract_fields(chat, "x").doctor_notes.empty());

    ScriptedChat missing;
    missing.replies = {{R"({"doctor_notes":"n"})", "stop"}, {R"({"doctor_notes":"n"})", "stop"}};
    EXPECT_THROW(extract_fields(missing, "x"), AnswerError);
    EXPECT_EQ(missing.seen.size(), 2u);
}

TEST(GenerateAnswer, FirstTry) {
    ScriptedChat chat;
    chat.replies = {{valid_answer(), "stop"}};
    const auto g = generate_answer(chat, bundle(), item());
    EXPECT_EQ(g.attempts, 1);
    EXPECT_FALSE(g.repaired);
    EXPECT_EQ(g.raw, valid_answer());
    EXPECT_EQ(chat.seen[0][0], (ChatMessage{"system", "sys"}));
}

TEST(GenerateAnswer, OneRepair) {
    ScriptedChat chat;
    chat.replies = {{"不是JSON", "stop"}, {valid_answer(), "stop"}};
    const auto g = generate_answer(chat, bundle(), item());
    EXPECT_EQ(g.attempts, 2);
    EXPECT_TRUE(g.repaired);
    EXPECT_NO_THROW(parse_answer(g.raw, item()));
    EXPECT_TRUE(chat.seen[1].back().content.starts_with("user"));
}

TEST(GenerateAnswer, SecondFailureReturnsRaw) {
    ScriptedChat chat;
    chat.replies = {{"no", "stop"}, {"still no", "stop"}, {valid_answer(), "stop"}};
    const auto g = generate_answer(chat, bundle(), item());
    EXPECT_EQ(g.attempts, 2);
    EXPECT_EQ(g.raw, "still no");
    EXPECT_EQ(chat.replies.size(), 1u);
    EXPECT_THROW(parse_answer(g.raw, item()), AnswerError);
}
