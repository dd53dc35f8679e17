#include <random>

#include "doctest.h"
#include "fairpipe/serializer.hpp"
#include "test_util.hpp"

using namespace fairpipe;

namespace {

// Whitespace token count, the stand-in tokenizer for truncation tests.
std::size_t word_count(const std::string& s) {
  std::size_t n = 0;
  bool in_word = false;
  for (char c : s) {
    if (c == ' ') {
      in_word = false;
    } else if (!in_word) {
      in_word = true;
      ++n;
    }
  }
  return n;
}

FeatureOrder order_of(std::vector<std::string> names) {
  FeatureOrder order;
  for (std::size_t i = 0; i < names.size(); ++i) {
    order.scores[names[i]] = double(names.size() - i);
    order.ranked.push_back(names[i]);
  }
  return order;
}

}  // namespace

TEST_SUITE("serializer") {

TEST_CASE("serialize_record renders name is value statements in ranked order") {
  Record row = {{"age", true, "", 27.0},
                {"workclass", false, "Private", 0.0},
                {"hours-per-week", true, "", 46.0},
                {"sex", false, "male", 0.0},
                {"education", false, "HS-grad", 0.0}};
  FeatureOrder order =
      order_of({"workclass", "hours-per-week", "sex", "age", "education"});
  std::string text = serialize_record(row, order);
  CHECK(text.rfind("workclass is Private. hours-per-week is 46. sex is male. age is 27.",
                   0) == 0);
}

TEST_CASE("single feature and verbatim values") {
  Record row = {{"x", true, "", 1.0}};
  CHECK(serialize_record(row, order_of({"x"})) == "x is 1.");

  Record spaced = {{"job", false, "Private sector", 0.0}};
  CHECK(serialize_record(spaced, order_of({"job"})) == "job is Private sector.");
}

TEST_CASE("numeric rendering drops trailing zeros") {
  CHECK(format_number(46.0) == "46");
  CHECK(format_number(46.5) == "46.5");
  CHECK(format_number(0.25) == "0.25");
  CHECK(format_number(-3.0) == "-3");
  CHECK(format_number(100000.0) == "100000");
}

TEST_CASE("serialize_record errors when a ranked feature is missing from the row") {
  Record row = {{"a", true, "", 1.0}};
  CHECK_THROWS_AS(serialize_record(row, order_of({"a", "b"})), std::invalid_argument);
}

TEST_CASE("statement count equals feature count and statements parse back") {
  Record row = {{"a", true, "", 1.0}, {"b", false, "x y", 0.0}, {"c", true, "", 2.5}};
  FeatureOrder order = order_of({"c", "a", "b"});
  std::string text = serialize_record(row, order);
  std::vector<std::string> statements = split_statements(text);
  REQUIRE(statements.size() == 3);
  CHECK(statements[0] == "c is 2.5.");
  CHECK(statements[1] == "a is 1.");
  CHECK(statements[2] == "b is x y.");
}

TEST_CASE("truncate_to_budget keeps whole leading statements") {
  Record row = {{"a", false, "alpha", 0}, {"b", false, "beta", 0}, {"c", false, "gamma", 0}};
  std::string text = serialize_record(row, order_of({"a", "b", "c"}));
  // each statement is 3 words
  CHECK(truncate_to_budget(text, 100, word_count) == text);  // within budget: unchanged
  CHECK(truncate_to_budget(text, 6, word_count) == "a is alpha. b is beta.");
  CHECK(truncate_to_budget(text, 8, word_count) == "a is alpha. b is beta.");
  CHECK(truncate_to_budget(text, 3, word_count) == "a is alpha.");
  CHECK_THROWS_AS(truncate_to_budget(text, 2, word_count), std::invalid_argument);
  CHECK_THROWS_AS(truncate_to_budget(text, 0, word_count), std::invalid_argument);
}

TEST_CASE("truncation is idempotent and statement-wise a prefix") {
  Record row = {{"a", false, "alpha", 0}, {"b", false, "beta", 0}, {"c", false, "gamma", 0}};
  std::string text = serialize_record(row, order_of({"a", "b", "c"}));
  for (std::size_t budget = 3; budget <= 12; ++budget) {
    std::string once = truncate_to_budget(text, budget, word_count);
    CHECK(truncate_to_budget(once, budget, word_count) == once);
    auto full = split_statements(text);
    auto kept = split_statements(once);
    REQUIRE(kept.size() <= full.size());
    for (std::size_t i = 0; i < kept.size(); ++i) CHECK(kept[i] == full[i]);
  }
}

TEST_CASE("rank_features puts the predictive feature first") {
  // 100 rows: feature 0 perfectly predictive, feature 1 pure noise
  FeatureMatrix m;
  m.x = Matrix(100, 2);
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> noise(-1.0, 1.0);
  for (std::size_t r = 0; r < 100; ++r) {
    int y = r % 2;
    m.x(r, 0) = y == 1 ? 1.0 : -1.0;
    m.x(r, 1) = noise(rng);
    m.labels.push_back(y);
  }
  m.column_names = {"signal", "noise"};
  m.column_source = {0, 1};
  m.feature_names = {"signal", "noise"};
  FeatureOrder order = rank_features(m, m.labels, 0);
  CHECK(order.ranked[0] == "signal");
  CHECK(order.scores["signal"] > order.scores["noise"]);
}

TEST_CASE("all-zero coefficients preserve the schema order") {
  FeatureMatrix m;
  m.x = Matrix(10, 2);  // all-zero features force zero coefficients
  for (std::size_t r = 0; r < 10; ++r) m.labels.push_back(int(r % 2));
  m.column_names = {"b_col", "a_col"};
  m.column_source = {0, 1};
  m.feature_names = {"b_col", "a_col"};
  FeatureOrder order = rank_features(m, m.labels, 0);
  CHECK(order.ranked == std::vector<std::string>{"b_col", "a_col"});
}

TEST_CASE("rank_features is invariant to row order") {
  FeatureMatrix m;
  m.x = Matrix(40, 3);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> noise(-1.0, 1.0);
  for (std::size_t r = 0; r < 40; ++r) {
    int y = int(r % 2);
    m.x(r, 0) = noise(rng);
    m.x(r, 1) = y ? 0.8 : -0.8;
    m.x(r, 2) = 0.5 * (y ? 1 : -1) + 0.5 * noise(rng);
    m.labels.push_back(y);
  }
  m.column_names = {"n", "strong", "weak"};
  m.column_source = {0, 1, 2};
  m.feature_names = {"n", "strong", "weak"};
  FeatureOrder base = rank_features(m, m.labels, 0);

  // reverse the rows
  FeatureMatrix rev = m;
  for (std::size_t r = 0; r < 40; ++r) {
    for (std::size_t c = 0; c < 3; ++c) rev.x(r, c) = m.x(39 - r, c);
    rev.labels[r] = m.labels[39 - r];
  }
  FeatureOrder reordered = rank_features(rev, rev.labels, 0);
  CHECK(base.ranked == reordered.ranked);
}

TEST_CASE("rank_features rejects single-class labels") {
  FeatureMatrix m;
  m.x = Matrix(4, 1);
  m.labels = {1, 1, 1, 1};
  m.column_names = {"a"};
  m.column_source = {0};
  m.feature_names = {"a"};
  CHECK_THROWS_AS(rank_features(m, m.labels, 0), std::invalid_argument);
}

TEST_CASE("build_classification_prompt is deterministic and carries the instruction") {
  TaskTemplate task;
  task.instruction =
      "Predict whether the given person earns a salary >50k USD based on their "
      "description. Answer only as yes/no";
  std::string prompt = build_classification_prompt("sex is male.", task);
  CHECK(prompt.find("Answer only as yes/no") != std::string::npos);
  CHECK(prompt.find("sex is male.") != std::string::npos);
  CHECK(prompt == build_classification_prompt("sex is male.", task));

  // empty serialized text stays legal
  std::string empty = build_classification_prompt("", task);
  CHECK(empty.find(task.instruction) != std::string::npos);
}

TEST_CASE("task templates load from JSON") {
  std::string path = test_util::write_temp(
      "task.json",
      R"({"instruction": "Is the credit risk good?", "yes_token": "yes", "no_token": "no", "positive_means_yes": true})");
  TaskTemplate t = load_task_template(path);
  CHECK(t.instruction == "Is the credit risk good?");
  CHECK(t.yes_token == "yes");
  std::string golden = build_classification_prompt("age is 30.", t);
  CHECK(golden == "Is the credit risk good?\nage is 30.\nAnswer:");
}

}  // TEST_SUITE
