#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "vqapipe/captioning.hpp"
#include "vqapipe/errors.hpp"
#include "vqapipe/rng.hpp"

namespace vqapipe {

struct VqaQuestion {
    std::string question_id;
    std::string image_id;
    std::string question;
};

struct VqaAnnotation {
    std::string question_id;
    std::string image_id;
    std::string question_type;
    std::string answer_type;
    std::vector<std::string> answers;  // exactly 10 human answers
};

struct JoinedSample {
    std::string question_id;
    std::string image_id;
    std::string question;
    std::string question_type;
    std::string answer_type;
    std::vector<std::string> answers;
};

// ---------------------------------------------------------------------------
// Answer normalization, following the official VQA evaluation rules:
// lowercase, punctuation stripping, number words to digits, article removal,
// contraction canonicalization, whitespace collapse.
// ---------------------------------------------------------------------------

namespace eval_detail {

inline const std::unordered_map<std::string, std::string>& contractions() {
    static const std::unordered_map<std::string, std::string> table = {
        {"aint", "ain't"}, {"arent", "aren't"}, {"cant", "can't"}, {"couldve", "could've"},
        {"couldnt", "couldn't"}, {"couldn'tve", "couldn't've"}, {"couldnt've", "couldn't've"},
        {"didnt", "didn't"}, {"doesnt", "doesn't"}, {"dont", "don't"}, {"hadnt", "hadn't"},
        {"hadnt've", "hadn't've"}, {"hadn'tve", "hadn't've"}, {"hasnt", "hasn't"},
        {"havent", "haven't"}, {"hed", "he'd"}, {"hed've", "he'd've"}, {"he'dve", "he'd've"},
        {"hes", "he's"}, {"howd", "how'd"}, {"howll", "how'll"}, {"hows", "how's"},
        {"id've", "i'd've"}, {"i'dve", "i'd've"}, {"im", "i'm"}, {"ive", "i've"},
        {"isnt", "isn't"}, {"itd", "it'd"}, {"itd've", "it'd've"}, {"it'dve", "it'd've"},
        {"itll", "it'll"}, {"let's", "let's"}, {"maam", "ma'am"}, {"mightnt", "mightn't"},
        {"mightnt've", "mightn't've"}, {"mightn'tve", "mightn't've"}, {"mightve", "might've"},
        {"mustnt", "mustn't"}, {"mustve", "must've"}, {"neednt", "needn't"},
        {"notve", "not've"}, {"oclock", "o'clock"}, {"oughtnt", "oughtn't"},
        {"ow's'at", "'ow's'at"}, {"'ows'at", "'ow's'at"}, {"'ow'sat", "'ow's'at"},
        {"shant", "shan't"}, {"shed've", "she'd've"}, {"she'dve", "she'd've"},
        {"she's", "she's"}, {"shouldve", "should've"}, {"shouldnt", "shouldn't"},
        {"shouldnt've", "shouldn't've"}, {"shouldn'tve", "shouldn't've"},
        {"somebody'd", "somebodyd"}, {"somebodyd've", "somebody'd've"},
        {"somebody'dve", "somebody'd've"}, {"somebodyll", "somebody'll"},
        {"somebodys", "somebody's"}, {"someoned", "someone'd"},
        {"someoned've", "someone'd've"}, {"someone'dve", "someone'd've"},
        {"someonell", "someone'll"}, {"someones", "someone's"}, {"somethingd", "something'd"},
        {"somethingd've", "something'd've"}, {"something'dve", "something'd've"},
        {"somethingll", "something'll"}, {"thats", "that's"}, {"thered", "there'd"},
        {"thered've", "there'd've"}, {"there'dve", "there'd've"}, {"therere", "there're"},
        {"theres", "there's"}, {"theyd", "they'd"}, {"theyd've", "they'd've"},
        {"they'dve", "they'd've"}, {"theyll", "they'll"}, {"theyre", "they're"},
        {"theyve", "they've"}, {"twas", "'twas"}, {"wasnt", "wasn't"},
        {"wed've", "we'd've"}, {"we'dve", "we'd've"}, {"weve", "we've"},
        {"werent", "weren't"}, {"whatll", "what'll"}, {"whatre", "what're"},
        {"whats", "what's"}, {"whatve", "what've"}, {"whens", "when's"},
        {"whered", "where'd"}, {"wheres", "where's"}, {"whereve", "where've"},
        {"whod", "who'd"}, {"whod've", "who'd've"}, {"who'dve", "who'd've"},
        {"wholl", "who'll"}, {"whos", "who's"}, {"whove", "who've"}, {"whyll", "why'll"},
        {"whyre", "why're"}, {"whys", "why's"}, {"wont", "won't"}, {"wouldve", "would've"},
        {"wouldnt", "wouldn't"}, {"wouldnt've", "wouldn't've"}, {"wouldn'tve", "wouldn't've"},
        {"yall", "y'all"}, {"yall'll", "y'all'll"}, {"y'allll", "y'all'll"},
        {"yall'd've", "y'all'd've"}, {"y'alld've", "y'all'd've"}, {"y'all'dve", "y'all'd've"},
        {"youd", "you'd"}, {"youd've", "you'd've"}, {"you'dve", "you'd've"},
        {"youll", "you'll"}, {"youre", "you're"}, {"youve", "you've"}};
    return table;
}

inline const std::unordered_map<std::string, std::string>& number_words() {
    static const std::unordered_map<std::string, std::string> table = {
        {"none", "0"}, {"zero", "0"}, {"one", "1"}, {"two", "2"},  {"three", "3"},
        {"four", "4"}, {"five", "5"}, {"six", "6"}, {"seven", "7"}, {"eight", "8"},
        {"nine", "9"}, {"ten", "10"}};
    return table;
}

inline bool is_digit(char c) { return c >= '0' && c <= '9'; }

// Punctuation set of the reference scorer; apostrophe, period and colon get
// their own context-sensitive rules.
inline bool is_listed_punct(char c) {
    static const std::string puncts = ";/[]\"{}()=+\\_->,<@`?!";
    return puncts.find(c) != std::string::npos;
}

inline bool comma_between_digits(const std::string& s) {
    for (std::size_t i = 1; i + 1 < s.size(); ++i)
        if (s[i] == ',' && is_digit(s[i - 1]) && is_digit(s[i + 1])) return true;
    return false;
}

inline std::string process_punctuation(const std::string& in) {
    bool digit_comma = comma_between_digits(in);
    std::string out;
    out.reserve(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) {
        char c = in[i];
        char prev = i > 0 ? in[i - 1] : '\0';
        char next = i + 1 < in.size() ? in[i + 1] : '\0';
        if (is_listed_punct(c)) {
            // Attached punctuation is deleted so words stay joined ("1,000"
            // -> "1000"); free-standing punctuation becomes a space.
            bool attached = (next == ' ') || (prev == ' ') || digit_comma;
            if (!attached) out.push_back(' ');
            continue;
        }
        if (c == '.') {
            if (is_digit(prev) && is_digit(next)) out.push_back(c);  // keep "1.5"
            continue;
        }
        if (c == ':') {
            if (is_digit(prev) && is_digit(next)) out.push_back(c);  // keep "5:30"
            continue;
        }
        if (c == '\'') {
            bool inside_word = std::isalnum(static_cast<unsigned char>(prev)) &&
                               std::isalnum(static_cast<unsigned char>(next));
            if (inside_word) out.push_back(c);
            continue;
        }
        out.push_back(c);
    }
    return out;
}

inline std::vector<std::string> split_words(const std::string& s) {
    std::vector<std::string> words;
    std::string cur;
    for (char c : s) {
        if (c == ' ' || c == '\t' || c == '\n') {
            if (!cur.empty()) words.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

}  // namespace eval_detail

inline std::string normalize_answer(const std::string& raw) {
    std::string s = text::to_lower(raw);
    for (char& c : s)
        if (c == '\n' || c == '\t') c = ' ';
    s = eval_detail::process_punctuation(text::trim(s));

    std::vector<std::string> out_words;
    for (std::string& w : eval_detail::split_words(s)) {
        auto num = eval_detail::number_words().find(w);
        if (num != eval_detail::number_words().end()) w = num->second;
        if (w == "a" || w == "an" || w == "the") continue;
        auto con = eval_detail::contractions().find(w);
        if (con != eval_detail::contractions().end()) w = con->second;
        out_words.push_back(std::move(w));
    }

    std::string result;
    for (std::size_t i = 0; i < out_words.size(); ++i) {
        if (i > 0) result.push_back(' ');
        result += out_words[i];
    }
    return result;
}

// ---------------------------------------------------------------------------
// Soft accuracy: min(#matching humans / 3, 1) averaged over all 10 choose 9
// annotator subsets.
// ---------------------------------------------------------------------------

// Closed form as a function of the total match count m among the 10
// annotators. Each leave-one-out subset sees m or m-1 matches depending on
// whether the left-out annotator matched.
inline double soft_accuracy_from_matches(int m) {
    if (m < 0 || m > 10) throw ValidationError("match count must be in [0,10]");
    auto clamp3 = [](int x) { return std::min(static_cast<double>(x) / 3.0, 1.0); };
    double drop_match = m > 0 ? clamp3(m - 1) : 0.0;
    return (m * drop_match + (10 - m) * clamp3(m)) / 10.0;
}

inline double soft_accuracy(const std::string& prediction,
                            const std::vector<std::string>& human_answers) {
    if (human_answers.size() != 10)
        throw ValidationError("soft accuracy requires exactly 10 human answers, got " +
                              std::to_string(human_answers.size()));
    std::string pred = normalize_answer(prediction);
    int m = 0;
    for (const std::string& h : human_answers)
        if (normalize_answer(h) == pred) ++m;
    return soft_accuracy_from_matches(m);
}

// ---------------------------------------------------------------------------
// Reporting
// ---------------------------------------------------------------------------

struct TypeAccuracy {
    double accuracy = 0.0;
    std::size_t count = 0;
};

struct EvalReport {
    double overall = 0.0;
    std::map<std::string, TypeAccuracy> per_question_type;
    std::map<std::string, TypeAccuracy> per_answer_type;
    std::size_t n_questions = 0;

    nlohmann::json to_json() const {
        auto types_json = [](const std::map<std::string, TypeAccuracy>& m) {
            nlohmann::json j = nlohmann::json::object();
            for (const auto& [type, acc] : m)
                j[type] = {{"accuracy", acc.accuracy}, {"count", acc.count}};
            return j;
        };
        return {{"overall", overall},
                {"n_questions", n_questions},
                {"per_question_type", types_json(per_question_type)},
                {"per_answer_type", types_json(per_answer_type)}};
    }

    static EvalReport from_json(const nlohmann::json& j) {
        EvalReport r;
        r.overall = j.at("overall").get<double>();
        r.n_questions = j.at("n_questions").get<std::size_t>();
        auto read = [](const nlohmann::json& src, std::map<std::string, TypeAccuracy>& dst) {
            for (auto it = src.begin(); it != src.end(); ++it)
                dst[it.key()] = {it.value().at("accuracy").get<double>(),
                                 it.value().at("count").get<std::size_t>()};
        };
        read(j.at("per_question_type"), r.per_question_type);
        read(j.at("per_answer_type"), r.per_answer_type);
        return r;
    }
};

struct EvalOptions {
    bool allow_partial = false;
};

inline EvalReport evaluate_run(const std::vector<std::pair<std::string, std::string>>& predictions,
                               const std::vector<JoinedSample>& annotations,
                               const EvalOptions& options = {}) {
    std::unordered_map<std::string, const JoinedSample*> by_id;
    for (const JoinedSample& s : annotations) by_id[s.question_id] = &s;

    std::unordered_set<std::string> seen;
    std::vector<std::string> unknown;
    struct Agg {
        double sum = 0.0;
        std::size_t count = 0;
    };
    std::map<std::string, Agg> q_types, a_types;
    double total = 0.0;
    std::size_t n = 0;

    for (const auto& [qid, answer] : predictions) {
        if (!seen.insert(qid).second)
            throw ValidationError("duplicate prediction for question_id " + qid);
        auto it = by_id.find(qid);
        if (it == by_id.end()) {
            unknown.push_back(qid);
            continue;
        }
        double acc = soft_accuracy(answer, it->second->answers);
        total += acc;
        ++n;
        q_types[it->second->question_type].sum += acc;
        q_types[it->second->question_type].count += 1;
        a_types[it->second->answer_type].sum += acc;
        a_types[it->second->answer_type].count += 1;
    }

    if (!unknown.empty()) {
        std::string msg = "predictions reference unknown question ids:";
        for (const std::string& id : unknown) msg += " " + id;
        throw ValidationError(msg);
    }
    if (!options.allow_partial && n != annotations.size())
        throw ValidationError("predictions cover " + std::to_string(n) + " of " +
                              std::to_string(annotations.size()) +
                              " annotated questions (use allow_partial to score a subset)");
    if (n == 0) throw ValidationError("no predictions to evaluate");

    EvalReport report;
    report.n_questions = n;
    report.overall = total / static_cast<double>(n);
    for (const auto& [type, agg] : q_types)
        report.per_question_type[type] = {agg.sum / static_cast<double>(agg.count), agg.count};
    for (const auto& [type, agg] : a_types)
        report.per_answer_type[type] = {agg.sum / static_cast<double>(agg.count), agg.count};
    return report;
}

// Per-type CSV for accuracy breakdown charts.
inline std::string report_csv(const std::map<std::string, TypeAccuracy>& per_type) {
    std::ostringstream out;
    out << "type,count,accuracy\n";
    out.precision(10);
    for (const auto& [type, acc] : per_type) {
        std::string escaped = type;
        bool quote = escaped.find(',') != std::string::npos || escaped.find('"') != std::string::npos;
        if (quote) {
            std::string q = "\"";
            for (char c : escaped) {
                if (c == '"') q += "\"\"";
                else q.push_back(c);
            }
            q += "\"";
            escaped = q;
        }
        out << escaped << ',' << acc.count << ',' << acc.accuracy << '\n';
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// VQAv2 file ingestion
// ---------------------------------------------------------------------------

namespace eval_detail {

inline std::string id_to_string(const nlohmann::json& j) {
    if (j.is_string()) return j.get<std::string>();
    if (j.is_number_integer()) return std::to_string(j.get<std::int64_t>());
    throw ValidationError("identifier is neither string nor integer");
}

}  // namespace eval_detail

// Joins a VQAv2 question file with its annotation file on question_id and
// validates the 10-answer invariant.
inline std::vector<JoinedSample> load_split(const std::string& questions_path,
                                            const std::string& annotations_path) {
    auto parse_file = [](const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw ConfigurationError("cannot open file: " + path);
        try {
            return nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError("parse error in " + path + ": " + e.what());
        }
    };

    nlohmann::json qj = parse_file(questions_path);
    nlohmann::json aj = parse_file(annotations_path);

    std::unordered_map<std::string, VqaQuestion> questions;
    for (const nlohmann::json& q : qj.at("questions")) {
        VqaQuestion question;
        question.question_id = eval_detail::id_to_string(q.at("question_id"));
        question.image_id = eval_detail::id_to_string(q.at("image_id"));
        question.question = q.at("question").get<std::string>();
        if (!questions.emplace(question.question_id, question).second)
            throw ValidationError("duplicate question_id in question file: " + question.question_id);
    }

    std::vector<JoinedSample> joined;
    joined.reserve(questions.size());
    for (const nlohmann::json& a : aj.at("annotations")) {
        std::string qid = eval_detail::id_to_string(a.at("question_id"));
        auto it = questions.find(qid);
        if (it == questions.end())
            throw ValidationError("annotation for question_id " + qid + " has no matching question");

        JoinedSample s;
        s.question_id = qid;
        s.image_id = it->second.image_id;
        s.question = it->second.question;
        s.question_type = a.at("question_type").get<std::string>();
        s.answer_type = a.at("answer_type").get<std::string>();
        for (const nlohmann::json& ans : a.at("answers"))
            s.answers.push_back(ans.at("answer").get<std::string>());
        if (s.answers.size() != 10)
            throw ValidationError("question " + qid + " has " + std::to_string(s.answers.size()) +
                                  " answers, expected 10");
        if (s.question_type.empty())
            throw ValidationError("question " + qid + " has an empty question_type");
        joined.push_back(std::move(s));
    }

    if (joined.size() != questions.size())
        throw ValidationError(std::to_string(questions.size() - joined.size()) +
                              " questions have no annotation");
    std::sort(joined.begin(), joined.end(),
              [](const JoinedSample& a, const JoinedSample& b) { return a.question_id < b.question_id; });
    return joined;
}

// Deterministic seeded sample without replacement, stratified by
// question_type via largest-remainder allocation.
inline std::vector<JoinedSample> sample_fixture(const std::vector<JoinedSample>& samples,
                                                std::size_t n, std::uint64_t seed) {
    if (n > samples.size())
        throw ValidationError("fixture size " + std::to_string(n) + " exceeds population " +
                              std::to_string(samples.size()));
    if (n == samples.size()) return samples;

    std::map<std::string, std::vector<std::size_t>> strata;
    for (std::size_t i = 0; i < samples.size(); ++i)
        strata[samples[i].question_type].push_back(i);

    // Proportional quotas, remainders assigned to the largest fractional parts.
    struct Quota {
        std::string type;
        std::size_t take;
        double frac;
    };
    std::vector<Quota> quotas;
    std::size_t allocated = 0;
    for (const auto& [type, members] : strata) {
        double exact = static_cast<double>(n) * static_cast<double>(members.size()) /
                       static_cast<double>(samples.size());
        auto take = static_cast<std::size_t>(exact);
        take = std::min(take, members.size());
        quotas.push_back({type, take, exact - static_cast<double>(take)});
        allocated += take;
    }
    std::stable_sort(quotas.begin(), quotas.end(),
                     [](const Quota& a, const Quota& b) { return a.frac > b.frac; });
    for (Quota& q : quotas) {
        if (allocated >= n) break;
        if (q.take < strata[q.type].size()) {
            ++q.take;
            ++allocated;
        }
    }
    // Strata can saturate; top up from any type with headroom.
    for (Quota& q : quotas) {
        while (allocated < n && q.take < strata[q.type].size()) {
            ++q.take;
            ++allocated;
        }
    }

    std::vector<std::size_t> chosen;
    for (const Quota& q : quotas) {
        std::vector<std::size_t> members = strata[q.type];
        CounterRng rng(stable_hash(seed, q.type));
        for (std::size_t i = members.size(); i > 1; --i)
            std::swap(members[i - 1], members[rng.next_below(i)]);
        chosen.insert(chosen.end(), members.begin(), members.begin() + static_cast<long>(q.take));
    }
    std::sort(chosen.begin(), chosen.end());

    std::vector<JoinedSample> out;
    out.reserve(chosen.size());
    for (std::size_t i : chosen) out.push_back(samples[i]);
    return out;
}

}  // namespace vqapipe
