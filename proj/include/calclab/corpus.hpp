#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "calclab/rng.hpp"

namespace calclab {

enum class Op { Add, Sub, Mul, Div };
enum class Family { Equation, Statement, QuestionAnswer, TimeSpan, ObjectAccumulation };

std::string op_name(Op op);
Op op_from_name(const std::string& name);
std::string family_name(Family f);
Family family_from_name(const std::string& name);
int apply_op(Op op, int a, int b);

// A sentence pattern. `pattern` is pre-tokenized (space separated) with slots
// {A} {B} {C} plus word-pool slots like <NAME>, <OBJECT>, <MONTH>, <YYY>{B}.
// {C} is always the terminal slot: the prompt stops right before it and the
// model is scored on predicting its first digit. `op_token` names the single
// calculation-carrying token that counterfactuals replace.
struct Template {
    std::string id;
    Op op = Op::Add;
    Family family = Family::Equation;
    std::string pattern;
    std::string op_token;
    bool symbol_op = false;  // substitute from the symbol pool instead of the null-word pool
};

const std::vector<Template>& builtin_templates();
std::vector<Template> select_templates(const std::vector<Op>& ops, const std::vector<Family>& families);

// Fixed token <-> id bijection covering digits, operator symbols/words, all
// template words and word pools, plus <pad> and <s>.
class Vocabulary {
  public:
    static const Vocabulary& builtin();

    int size() const { return static_cast<int>(tokens_.size()); }
    int id(const std::string& token) const;  // throws data_error on OOV
    const std::string& token(int id) const;
    bool contains(const std::string& token) const { return ids_.count(token) > 0; }

    int pad() const { return 0; }
    int bos() const { return 1; }
    bool is_digit(int id) const { return id >= digit0_ && id < digit0_ + 10; }
    int digit_id(int digit) const { return digit0_ + digit; }

    // Word-level split with every multi-digit numeral split into digit tokens.
    std::vector<int> tokenize(const std::string& text) const;
    // Inverse modulo whitespace: adjacent digit tokens are joined back.
    std::string detokenize(std::span<const int> ids) const;

    std::vector<int> encode(const std::vector<std::string>& tokens) const;

    void save(const std::filesystem::path& path) const;

  private:
    Vocabulary();
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
    int digit0_ = 0;
};

// One aligned reference/counterfactual pair. Token vectors include the
// leading <s>; all recorded positions index into them.
struct PromptPair {
    std::string template_id;
    Op op = Op::Add;
    int a = 0, b = 0;
    std::string answer;  // full answer numeral, e.g. "8" or "12"
    std::vector<std::string> ref_tokens;
    std::vector<std::string> cf_tokens;
    std::vector<int> subst_positions;
    std::vector<int> a_positions, b_positions, op_positions;

    std::vector<int> ref_ids, cf_ids;  // encoded against the builtin vocabulary
    int answer_token = -1;             // id of the first digit of `answer`

    std::string ref_text() const;
};

PromptPair instantiate(const Template& tmpl, int a, int b, Rng& rng);

struct DatasetSpec {
    std::vector<Op> operations = {Op::Add};
    std::vector<Family> families = {Family::Equation, Family::Statement, Family::QuestionAnswer};
    int count = 1000;
    int range_lo = 1, range_hi = 9;
    bool single_token_answer = true;
    std::uint64_t seed = 0;
    double val_fraction = 0.1;
    std::vector<Family> holdout_families;  // samples of these families go to a third split
};

struct Dataset {
    DatasetSpec spec;
    std::vector<PromptPair> pairs;
    std::vector<int> train_idx, val_idx, heldout_idx;

    std::vector<const PromptPair*> split(const std::vector<int>& idx) const;
};

Dataset build_dataset(const DatasetSpec& spec);

// dataset.jsonl + dataset.manifest.json + vocab.json under `dir`.
void write_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace calclab
