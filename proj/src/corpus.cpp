#include "calclab/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "calclab/errors.hpp"
#include "calclab/hash.hpp"

namespace calclab {

using nlohmann::json;

std::string op_name(Op op) {
    switch (op) {
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Div: return "div";
    }
    return "?";
}

Op op_from_name(const std::string& name) {
    if (name == "add") return Op::Add;
    if (name == "sub") return Op::Sub;
    if (name == "mul") return Op::Mul;
    if (name == "div") return Op::Div;
    throw config_error("unknown operation '" + name + "' (expected add|sub|mul|div)");
}

std::string family_name(Family f) {
    switch (f) {
        case Family::Equation: return "equation";
        case Family::Statement: return "statement";
        case Family::QuestionAnswer: return "qa";
        case Family::TimeSpan: return "timespan";
        case Family::ObjectAccumulation: return "objacc";
    }
    return "?";
}

Family family_from_name(const std::string& name) {
    if (name == "equation") return Family::Equation;
    if (name == "statement") return Family::Statement;
    if (name == "qa") return Family::QuestionAnswer;
    if (name == "timespan") return Family::TimeSpan;
    if (name == "objacc") return Family::ObjectAccumulation;
    throw config_error("unknown family '" + name + "' (expected equation|statement|qa|timespan|objacc)");
}

int apply_op(Op op, int a, int b) {
    switch (op) {
        case Op::Add: return a + b;
        case Op::Sub: return a - b;
        case Op::Mul: return a * b;
        case Op::Div:
            if (b == 0 || a % b != 0) throw data_error("division " + std::to_string(a) + "/" + std::to_string(b) + " has no integer answer");
            return a / b;
    }
    return 0;
}

// ---------------------------------------------------------------------------
// word pools

namespace pools {

const std::vector<std::string> kNullWords = {"none", "nothing", "neither", "nowhere", "null"};
const std::vector<std::string> kCfSymbols = {"<", ">", "#", "&", "@"};
const std::vector<std::string> kEvents = {"war", "conflict", "festival", "meeting", "project"};
const std::vector<std::string> kSpanVerbs = {"last", "span", "continue", "extend"};
const std::vector<std::string> kMonths = {"Jan.", "Feb.", "Mar.", "Apr.", "May.", "Jun.",
                                          "Jul.", "Aug.", "Sep.", "Oct.", "Nov.", "Dec."};
const std::vector<std::string> kObjects = {"apple", "orange", "banana", "grape", "peach", "pear"};
const std::vector<std::string> kGetVerbs = {"get", "obtain", "receive", "acquire"};
const std::vector<std::string> kNames = {
    "Alice",   "Bob",    "Carol",  "David",  "Emma",   "Frank",  "Grace",  "Henry",   "Ivy",    "Jack",
    "Kate",    "Liam",   "Mary",   "Noah",   "Olivia", "Peter",  "Quinn",  "Ryan",    "Sarah",  "Tom",
    "Uma",     "Victor", "Wendy",  "Xavier", "Yara",   "Zack",   "Aaron",  "Bella",   "Caleb",  "Diana",
    "Ethan",   "Fiona",  "George", "Hannah", "Isaac",  "Julia",  "Kevin",  "Laura",   "Mason",  "Nora",
    "Oscar",   "Paula",  "Quentin", "Rachel", "Samuel", "Tina",   "Ulysses", "Vera",   "William", "Xenia",
    "Yusuf",   "Zoe",    "Adam",   "Beth",   "Carl",   "Daisy",  "Eric",   "Faye",    "Gavin",  "Holly",
    "Ian",     "Jade",   "Kyle",   "Lily",   "Mark",   "Nina",   "Owen",   "Pearl",   "Reed",   "Sofia",
    "Troy",    "Ursula", "Vince",  "Willa",  "Xander", "Yvonne", "Zane",   "Amber",   "Blake",  "Clara",
    "Derek",   "Elsa",   "Felix",  "Gina",   "Hugo",   "Iris",   "James",  "Karen",   "Leo",    "Mia",
    "Nathan",  "Opal",   "Philip", "Rosa",   "Simon",  "Tara",   "Umar",   "Violet",  "Wade",   "Zelda"};

}  // namespace pools

// ---------------------------------------------------------------------------
// templates

namespace {

struct OpWords {
    std::string symbol, word, noun, qnoun;
};

const OpWords& words_for(Op op) {
    static const OpWords add{"+", "plus", "addition", "sum"};
    static const OpWords sub{"-", "minus", "difference", "difference"};
    static const OpWords mul{"*", "times", "product", "product"};
    static const OpWords div{"/", "over", "ratio", "ratio"};
    switch (op) {
        case Op::Add: return add;
        case Op::Sub: return sub;
        case Op::Mul: return mul;
        case Op::Div: return div;
    }
    return add;
}

std::vector<Template> make_templates() {
    std::vector<Template> out;
    for (Op op : {Op::Add, Op::Sub, Op::Mul, Op::Div}) {
        const OpWords& w = words_for(op);
        const std::string oc = op_name(op);
        auto push = [&](int idx, Family fam, const char* famcode, std::string pattern, std::string op_token, bool symbol) {
            out.push_back({oc + "_" + famcode + "_" + std::to_string(idx), op, fam, std::move(pattern), std::move(op_token), symbol});
        };
        push(0, Family::Equation, "eq", "{A} " + w.symbol + " {B} = {C}", w.symbol, true);
        push(1, Family::Statement, "st", "{A} " + w.word + " {B} equals to {C}", w.word, false);
        push(2, Family::Statement, "st", "The " + w.noun + " of {A} and {B} is {C}", w.noun, false);
        push(3, Family::Statement, "st", "The " + w.noun + " of {A} and {B} equals to {C}", w.noun, false);
        push(4, Family::Statement, "st", "The " + w.noun + " of {A} and {B} equals to {C}", w.noun, false);
        push(5, Family::QuestionAnswer, "qa", "Q : How much is {A} " + w.word + " {B} ? A : {C}", w.word, false);
        push(6, Family::QuestionAnswer, "qa", "Q : What is {A} " + w.word + " {B} ? A : {C}", w.word, false);
        push(7, Family::QuestionAnswer, "qa", "Q : What is the result of {A} " + w.word + " {B} ? A : {C}", w.word, false);
        push(8, Family::QuestionAnswer, "qa", "Q : What is the " + w.qnoun + " of {A} and {B} ? A : {C}", w.qnoun, false);
    }
    // extra addition-only sentence meanings
    auto push_add = [&](const std::string& id, Family fam, std::string pattern, std::string op_token) {
        out.push_back({id, Op::Add, fam, std::move(pattern), std::move(op_token), false});
    };
    push_add("add_ts_0", Family::TimeSpan, "The <EVENT> <VERB> {A} years from the year <YYY>{B} to the year <YYY>{C}", "years");
    push_add("add_ts_1", Family::TimeSpan, "The <EVENT> <VERB> {A} years from <YYY>{B} to <YYY>{C}", "years");
    push_add("add_ts_2", Family::TimeSpan, "The <EVENT> <VERB> {A} days from <MONTH> {B} to <MONTH> {C}", "days");
    push_add("add_ts_3", Family::TimeSpan, "The <EVENT> will <VERB> {A} days from <MONTH> {B} to <MONTH> {C}", "days");
    push_add("add_ts_4", Family::TimeSpan, "The <EVENT> <VERB> {A} hours from {B} pm to {C}", "hours");
    push_add("add_ts_5", Family::TimeSpan, "The <EVENT> will <VERB> {A} hours from {B} pm to {C}", "hours");
    push_add("add_ts_6", Family::TimeSpan, "The <EVENT> <VERB> {A} hours from {B} am to {C}", "hours");
    push_add("add_ts_7", Family::TimeSpan, "The <EVENT> will <VERB> {A} hours from {B} am to {C}", "hours");
    push_add("add_oa_0", Family::ObjectAccumulation,
             "<NAME> has {A} <OBJECT> , then <NAME> <VERB> {B} <OBJECT> . What's the total number of <OBJECT> that <NAME> has ? "
             "The answer is {C}",
             "total");
    push_add("add_oa_1", Family::ObjectAccumulation,
             "<NAME> <VERB> {A} <OBJECT> , and <NAME2> <VERB> {B} <OBJECT> . What's the total number of <OBJECT> that they <VERB> ? "
             "The answer is {C}",
             "total");
    push_add("add_oa_2", Family::ObjectAccumulation,
             "<NAME> has {A} <OBJECT> , and <NAME2> has {B} <OBJECT> . What's the total number of <OBJECT> that they have ? "
             "The answer is {C}",
             "total");
    push_add("add_oa_3", Family::ObjectAccumulation,
             "<NAME> <VERB> {A} <OBJECT> yesterday , and <NAME> <VERB> {B} <OBJECT> today . What's the total number of <OBJECT> "
             "that <NAME> <VERB> ? The answer is {C}",
             "total");
    return out;
}

std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

bool all_digits(const std::string& s) {
    if (s.empty()) return false;
    return std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

bool is_slot(const std::string& tok) { return tok.front() == '{' || tok.front() == '<'; }

}  // namespace

const std::vector<Template>& builtin_templates() {
    static const std::vector<Template> templates = make_templates();
    return templates;
}

std::vector<Template> select_templates(const std::vector<Op>& ops, const std::vector<Family>& families) {
    std::vector<Template> out;
    for (const Template& t : builtin_templates()) {
        if (std::find(ops.begin(), ops.end(), t.op) == ops.end()) continue;
        if (std::find(families.begin(), families.end(), t.family) == families.end()) continue;
        out.push_back(t);
    }
    return out;
}

// ---------------------------------------------------------------------------
// vocabulary

Vocabulary::Vocabulary() {
    auto add_token = [&](const std::string& t) {
        if (!ids_.count(t)) {
            ids_.emplace(t, static_cast<int>(tokens_.size()));
            tokens_.push_back(t);
        }
    };
    add_token("<pad>");
    add_token("<s>");
    digit0_ = static_cast<int>(tokens_.size());
    for (int d = 0; d < 10; ++d) add_token(std::to_string(d));
    for (const char* s : {"+", "-", "*", "/", "=", "<", ">", "#", "&", "@", "?", ":", ",", "."}) add_token(s);
    // every literal word the templates can emit
    for (const Template& t : builtin_templates()) {
        for (const std::string& tok : split_ws(t.pattern)) {
            if (!is_slot(tok)) add_token(tok);
        }
    }
    for (const auto& pool : {pools::kNullWords, pools::kEvents, pools::kSpanVerbs, pools::kMonths,
                             pools::kObjects, pools::kGetVerbs, pools::kNames}) {
        for (const auto& w : pool) add_token(w);
    }
    // a few extra connective words so near-template sentences stay in-vocab
    for (const char* s : {"equal", "is", "to", "and"}) add_token(s);
}

const Vocabulary& Vocabulary::builtin() {
    static const Vocabulary v;
    return v;
}

int Vocabulary::id(const std::string& token) const {
    auto it = ids_.find(token);
    if (it == ids_.end()) throw data_error("out-of-vocabulary word: '" + token + "'");
    return it->second;
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || id >= size()) throw data_error("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(size()));
    return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::tokenize(const std::string& text) const {
    std::vector<int> out;
    for (const std::string& chunk : split_ws(text)) {
        if (all_digits(chunk) && chunk.size() > 1) {
            for (char c : chunk) out.push_back(id(std::string(1, c)));
        } else {
            out.push_back(id(chunk));
        }
    }
    return out;
}

std::string Vocabulary::detokenize(std::span<const int> ids) const {
    std::string out;
    bool prev_digit = false;
    for (int t : ids) {
        const bool digit = is_digit(t);
        if (!out.empty() && !(digit && prev_digit)) out += ' ';
        out += token(t);
        prev_digit = digit;
    }
    return out;
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& tokens) const {
    std::vector<int> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(id(t));
    return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
    json j = json::object();
    for (int i = 0; i < size(); ++i) j[tokens_[static_cast<std::size_t>(i)]] = i;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw data_error("cannot write vocabulary file: " + path.string());
    out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// instantiation

std::string PromptPair::ref_text() const {
    const auto& vocab = Vocabulary::builtin();
    std::span<const int> body(ref_ids);
    if (!body.empty() && body[0] == vocab.bos()) body = body.subspan(1);
    return vocab.detokenize(body);
}

PromptPair instantiate(const Template& tmpl, int a, int b, Rng& rng) {
    if (a < 0 || b < 0) throw data_error("operands must be nonnegative");
    if (tmpl.op == Op::Sub && a < b) throw data_error("subtraction template needs A >= B, got " + std::to_string(a) + " - " + std::to_string(b));
    const int c = apply_op(tmpl.op, a, b);  // throws for non-integer division

    const auto pattern = split_ws(tmpl.pattern);
    if (pattern.empty() || pattern.back().find("{C}") == std::string::npos) {
        throw config_error("template " + tmpl.id + " must end with the {C} slot");
    }

    PromptPair pair;
    pair.template_id = tmpl.id;
    pair.op = tmpl.op;
    pair.a = a;
    pair.b = b;
    pair.answer = std::to_string(c);

    std::unordered_map<std::string, std::string> slot_values;  // repeated slots resolve identically
    auto sample_pool = [&](const std::string& slot, const std::vector<std::string>& pool) -> std::string {
        auto it = slot_values.find(slot);
        if (it != slot_values.end()) return it->second;
        std::string v = pool[static_cast<std::size_t>(rng.below(pool.size()))];
        if (slot == "<NAME2>") {  // distinct second person
            while (slot_values.count("<NAME>") && v == slot_values.at("<NAME>")) {
                v = pool[static_cast<std::size_t>(rng.below(pool.size()))];
            }
        }
        slot_values.emplace(slot, v);
        return v;
    };

    std::vector<std::string>& toks = pair.ref_tokens;
    toks.push_back("<s>");
    auto emit_digits = [&](int value, std::vector<int>* positions) {
        for (char ch : std::to_string(value)) {
            if (positions) positions->push_back(static_cast<int>(toks.size()));
            toks.emplace_back(1, ch);
        }
    };

    for (const std::string& pat : pattern) {
        if (pat == "{A}") {
            emit_digits(a, &pair.a_positions);
        } else if (pat == "{B}") {
            emit_digits(b, &pair.b_positions);
        } else if (pat == "{C}") {
            break;  // terminal: the answer is what the model must predict
        } else if (pat == "<YYY>{B}" || pat == "<YYY>{C}") {
            if (!slot_values.count("<YYY>")) slot_values["<YYY>"] = std::to_string(100 + static_cast<int>(rng.below(100)));
            emit_digits(std::stoi(slot_values["<YYY>"]), nullptr);
            if (pat == "<YYY>{C}") break;
            emit_digits(b, &pair.b_positions);
        } else if (pat == "<EVENT>") {
            toks.push_back(sample_pool(pat, pools::kEvents));
        } else if (pat == "<VERB>") {
            toks.push_back(sample_pool(pat, tmpl.family == Family::TimeSpan ? pools::kSpanVerbs : pools::kGetVerbs));
        } else if (pat == "<MONTH>") {
            toks.push_back(sample_pool(pat, pools::kMonths));
        } else if (pat == "<OBJECT>") {
            toks.push_back(sample_pool(pat, pools::kObjects));
        } else if (pat == "<NAME>" || pat == "<NAME2>") {
            toks.push_back(sample_pool(pat, pools::kNames));
        } else {
            if (pat == tmpl.op_token) pair.op_positions.push_back(static_cast<int>(toks.size()));
            toks.push_back(pat);
        }
    }
    if (pair.op_positions.empty()) throw config_error("template " + tmpl.id + " never emits its operator token '" + tmpl.op_token + "'");

    // counterfactual: same sentence with the calculation carrier nulled out
    const auto& cf_pool = tmpl.symbol_op ? pools::kCfSymbols : pools::kNullWords;
    const std::string replacement = cf_pool[static_cast<std::size_t>(rng.below(cf_pool.size()))];
    pair.cf_tokens = pair.ref_tokens;
    for (int p : pair.op_positions) {
        pair.cf_tokens[static_cast<std::size_t>(p)] = replacement;
        pair.subst_positions.push_back(p);
    }

    const auto& vocab = Vocabulary::builtin();
    pair.ref_ids = vocab.encode(pair.ref_tokens);
    pair.cf_ids = vocab.encode(pair.cf_tokens);
    pair.answer_token = vocab.id(std::string(1, pair.answer[0]));
    return pair;
}

// ---------------------------------------------------------------------------
// dataset generation

namespace {

std::vector<std::pair<int, int>> valid_operands(Op op, const DatasetSpec& spec) {
    std::vector<std::pair<int, int>> out;
    for (int a = spec.range_lo; a <= spec.range_hi; ++a) {
        for (int b = spec.range_lo; b <= spec.range_hi; ++b) {
            if (op == Op::Sub && a < b) continue;
            if (op == Op::Div && (b == 0 || a % b != 0)) continue;
            const int c = apply_op(op, a, b);
            if (spec.single_token_answer && (c < 0 || c > 9)) continue;
            out.emplace_back(a, b);
        }
    }
    return out;
}

}  // namespace

std::vector<const PromptPair*> Dataset::split(const std::vector<int>& idx) const {
    std::vector<const PromptPair*> out;
    out.reserve(idx.size());
    for (int i : idx) out.push_back(&pairs[static_cast<std::size_t>(i)]);
    return out;
}

Dataset build_dataset(const DatasetSpec& spec) {
    if (spec.count < 1) throw config_error("dataset count must be >= 1");
    if (spec.range_lo < 0 || spec.range_lo > spec.range_hi) throw config_error("bad operand range");
    const auto templates = select_templates(spec.operations, spec.families);
    if (templates.empty()) throw config_error("no templates match the requested operations/families");

    std::unordered_map<int, std::vector<std::pair<int, int>>> operands;
    for (Op op : spec.operations) {
        auto v = valid_operands(op, spec);
        if (v.empty()) {
            throw config_error("no valid operand pairs for " + op_name(op) + " in range [" + std::to_string(spec.range_lo) + "," +
                               std::to_string(spec.range_hi) + "]" + (spec.single_token_answer ? " with single-token answers" : ""));
        }
        operands.emplace(static_cast<int>(op), std::move(v));
    }

    Dataset ds;
    ds.spec = spec;
    Rng rng(spec.seed * 0x9e3779b97f4a7c15ULL + 1);
    for (int i = 0; i < spec.count; ++i) {
        const Template& tmpl = templates[static_cast<std::size_t>(i) % templates.size()];
        const auto& ops = operands.at(static_cast<int>(tmpl.op));
        const auto [a, b] = ops[static_cast<std::size_t>(rng.below(ops.size()))];
        ds.pairs.push_back(instantiate(tmpl, a, b, rng));
    }

    // split by unique sentence so no identical text crosses train/val
    const auto& vocab = Vocabulary::builtin();
    for (int i = 0; i < spec.count; ++i) {
        const PromptPair& p = ds.pairs[static_cast<std::size_t>(i)];
        const Template& tmpl = templates[static_cast<std::size_t>(i) % templates.size()];
        if (std::find(spec.holdout_families.begin(), spec.holdout_families.end(), tmpl.family) != spec.holdout_families.end()) {
            ds.heldout_idx.push_back(i);
            continue;
        }
        std::string key;
        for (const auto& t : p.ref_tokens) {
            key += t;
            key += ' ';
        }
        const std::uint64_t h = fnv1a64(key, 0xabcdef1234567890ULL ^ spec.seed);
        if (static_cast<double>(h % 1000000) < spec.val_fraction * 1000000.0) {
            ds.val_idx.push_back(i);
        } else {
            ds.train_idx.push_back(i);
        }
    }
    (void)vocab;
    return ds;
}

// ---------------------------------------------------------------------------
// persistence

namespace {

json spec_to_json(const DatasetSpec& spec) {
    json ops = json::array(), fams = json::array(), hold = json::array();
    for (Op op : spec.operations) ops.push_back(op_name(op));
    for (Family f : spec.families) fams.push_back(family_name(f));
    for (Family f : spec.holdout_families) hold.push_back(family_name(f));
    return json{{"operations", ops},
                {"families", fams},
                {"count", spec.count},
                {"range_lo", spec.range_lo},
                {"range_hi", spec.range_hi},
                {"single_token_answer", spec.single_token_answer},
                {"seed", spec.seed},
                {"val_fraction", spec.val_fraction},
                {"holdout_families", hold}};
}

DatasetSpec spec_from_json(const json& j) {
    DatasetSpec spec;
    spec.operations.clear();
    spec.families.clear();
    for (const auto& s : j.at("operations")) spec.operations.push_back(op_from_name(s.get<std::string>()));
    for (const auto& s : j.at("families")) spec.families.push_back(family_from_name(s.get<std::string>()));
    spec.count = j.at("count").get<int>();
    spec.range_lo = j.at("range_lo").get<int>();
    spec.range_hi = j.at("range_hi").get<int>();
    spec.single_token_answer = j.at("single_token_answer").get<bool>();
    spec.seed = j.at("seed").get<std::uint64_t>();
    spec.val_fraction = j.at("val_fraction").get<double>();
    for (const auto& s : j.at("holdout_families")) spec.holdout_families.push_back(family_from_name(s.get<std::string>()));
    return spec;
}

}  // namespace

void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const auto data_path = dir / "dataset.jsonl";
    {
        std::ofstream out(data_path, std::ios::trunc);
        if (!out) throw data_error("cannot write dataset file: " + data_path.string());
        for (const PromptPair& p : ds.pairs) {
            json j{{"template_id", p.template_id}, {"op", op_name(p.op)},
                   {"a", p.a},                     {"b", p.b},
                   {"answer", p.answer},           {"ref_tokens", p.ref_tokens},
                   {"cf_tokens", p.cf_tokens},     {"subst_positions", p.subst_positions},
                   {"a_positions", p.a_positions}, {"b_positions", p.b_positions},
                   {"op_positions", p.op_positions}};
            out << j.dump() << "\n";
        }
    }
    {
        json manifest{{"schema_version", 1},
                      {"spec", spec_to_json(ds.spec)},
                      {"count", static_cast<int>(ds.pairs.size())},
                      {"data_hash", hash_file(data_path.string())},
                      {"splits", json{{"train", ds.train_idx}, {"val", ds.val_idx}, {"heldout", ds.heldout_idx}}}};
        std::ofstream out(dir / "dataset.manifest.json", std::ios::trunc);
        out << manifest.dump(2) << "\n";
    }
    Vocabulary::builtin().save(dir / "vocab.json");
}

Dataset load_dataset(const std::filesystem::path& dir) {
    const auto data_path = dir / "dataset.jsonl";
    std::ifstream in(data_path);
    if (!in) throw data_error("cannot open dataset file: " + data_path.string());
    const auto& vocab = Vocabulary::builtin();

    Dataset ds;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw data_error("bad dataset line: " + std::string(e.what()));
        }
        PromptPair p;
        p.template_id = j.at("template_id").get<std::string>();
        p.op = op_from_name(j.at("op").get<std::string>());
        p.a = j.at("a").get<int>();
        p.b = j.at("b").get<int>();
        p.answer = j.at("answer").get<std::string>();
        p.ref_tokens = j.at("ref_tokens").get<std::vector<std::string>>();
        p.cf_tokens = j.at("cf_tokens").get<std::vector<std::string>>();
        p.subst_positions = j.at("subst_positions").get<std::vector<int>>();
        p.a_positions = j.at("a_positions").get<std::vector<int>>();
        p.b_positions = j.at("b_positions").get<std::vector<int>>();
        p.op_positions = j.at("op_positions").get<std::vector<int>>();
        p.ref_ids = vocab.encode(p.ref_tokens);
        p.cf_ids = vocab.encode(p.cf_tokens);
        p.answer_token = vocab.id(std::string(1, p.answer.at(0)));
        ds.pairs.push_back(std::move(p));
    }

    std::ifstream min(dir / "dataset.manifest.json");
    if (!min) throw data_error("missing dataset manifest in " + dir.string());
    json manifest = json::parse(min);
    ds.spec = spec_from_json(manifest.at("spec"));
    ds.train_idx = manifest.at("splits").at("train").get<std::vector<int>>();
    ds.val_idx = manifest.at("splits").at("val").get<std::vector<int>>();
    ds.heldout_idx = manifest.at("splits").at("heldout").get<std::vector<int>>();
    return ds;
}

}  // namespace calclab
