#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "spt/errors.hpp"
#include "spt/rng.hpp"

namespace spt {

// A template string is a sequence of literal spans and {{field}}
// placeholders. Placeholder syntax is exactly two braces; a lone '{' or
// a stray "}}" is literal text. An unterminated "{{" is a parse error.
struct TemplateString {
    struct Segment {
        bool is_field = false;
        std::string text;  // literal bytes, or the field name
    };
    std::string raw;
    std::vector<Segment> segments;
};

inline TemplateString parse_template(const std::string& raw) {
    TemplateString t;
    t.raw = raw;
    std::size_t pos = 0;
    std::string literal;
    while (pos < raw.size()) {
        if (raw.compare(pos, 2, "{{") == 0) {
            std::size_t end = raw.find("}}", pos + 2);
            if (end == std::string::npos)
                throw DataError("unbalanced braces in template: " + raw);
            std::string field = raw.substr(pos + 2, end - pos - 2);
            if (field.empty())
                throw DataError("empty placeholder in template: " + raw);
            if (!literal.empty()) {
                t.segments.push_back({false, literal});
                literal.clear();
            }
            t.segments.push_back({true, field});
            pos = end + 2;
        } else {
            literal.push_back(raw[pos++]);
        }
    }
    if (!literal.empty()) t.segments.push_back({false, literal});
    return t;
}

inline void collect_fields(const TemplateString& t, std::vector<std::string>& out) {
    for (const auto& seg : t.segments)
        if (seg.is_field) out.push_back(seg.text);
}

using FieldMap = std::map<std::string, std::string>;

// Literal bytes are preserved exactly; placeholders are replaced verbatim.
inline std::string render(const TemplateString& t, const FieldMap& example,
                          const std::string& context) {
    std::string out;
    for (const auto& seg : t.segments) {
        if (!seg.is_field) {
            out += seg.text;
        } else {
            auto it = example.find(seg.text);
            if (it == example.end())
                throw DataError("missing field '" + seg.text + "' " + context);
            out += it->second;
        }
    }
    return out;
}

struct PromptTemplate {
    std::string name;
    TemplateString input_template;
    TemplateString target_template;
    std::vector<TemplateString> answer_choices;  // empty = no choices

    bool has_choices() const { return !answer_choices.empty(); }
};

inline PromptTemplate make_template(const std::string& name, const std::string& input_tpl,
                                    const std::string& target_tpl,
                                    const std::vector<std::string>& choices = {}) {
    PromptTemplate t;
    t.name = name;
    t.input_template = parse_template(input_tpl);
    t.target_template = parse_template(target_tpl);
    for (const std::string& c : choices) t.answer_choices.push_back(parse_template(c));
    // duplicate-free choice list, checked on the raw strings
    for (std::size_t i = 0; i < choices.size(); ++i)
        for (std::size_t j = i + 1; j < choices.size(); ++j)
            if (choices[i] == choices[j])
                throw DataError("duplicate answer choice '" + choices[i] + "' in template " + name);
    return t;
}

struct PromptedExample {
    std::string task_name;
    std::string template_name;
    std::string input_text;
    std::string target_text;
    std::vector<std::string> answer_choice_texts;  // empty = no choices

    bool has_choices() const { return !answer_choice_texts.empty(); }

    // Position of target_text among the choices (rank-classification gold).
    std::size_t gold_choice_index() const {
        for (std::size_t i = 0; i < answer_choice_texts.size(); ++i)
            if (answer_choice_texts[i] == target_text) return i;
        throw DataError("target text is not among answer choices for task " + task_name);
    }
};

struct TaskDataset {
    std::string task_name;
    std::string split;  // train | validation | test
    std::vector<FieldMap> examples;
    std::vector<PromptTemplate> templates;
};

inline PromptedExample instantiate(const PromptTemplate& tpl, const FieldMap& example,
                                   const std::string& task_name = "") {
    std::string ctx = "(task '" + task_name + "', template '" + tpl.name + "')";
    PromptedExample out;
    out.task_name = task_name;
    out.template_name = tpl.name;
    out.input_text = render(tpl.input_template, example, ctx);
    out.target_text = render(tpl.target_template, example, ctx);
    for (const auto& choice : tpl.answer_choices)
        out.answer_choice_texts.push_back(render(choice, example, ctx));
    if (out.has_choices()) out.gold_choice_index();  // enforce membership
    return out;
}

// Template-major expansion: all examples under the first template, then
// the second, and so on. Exactly templates x examples outputs.
inline std::vector<PromptedExample> expand_dataset(const TaskDataset& ds) {
    std::vector<PromptedExample> out;
    out.reserve(ds.templates.size() * ds.examples.size());
    for (const auto& tpl : ds.templates)
        for (const auto& ex : ds.examples) out.push_back(instantiate(tpl, ex, ds.task_name));
    return out;
}

struct MixtureEntry {
    std::string task;
    std::string prompt_template;
    std::size_t count = 0;
    std::uint64_t seed = 0;
};

struct MixtureResult {
    std::vector<PromptedExample> examples;
    std::vector<MixtureEntry> manifest;
};

// Per (task, template): at most cap examples sampled without replacement
// under a sub-seed derived from the task/template names, then one global
// Fisher-Yates shuffle. Identical seed and inputs give an identical
// sequence regardless of platform.
inline MixtureResult build_mixture(const std::vector<TaskDataset>& datasets,
                                   std::size_t cap_per_template, std::uint64_t seed) {
    if (cap_per_template == 0) throw DataError("build_mixture: cap_per_template must be > 0");
    MixtureResult result;
    for (const auto& ds : datasets) {
        for (const auto& tpl : ds.templates) {
            std::uint64_t sub =
                derive_seed(seed, "sample/" + ds.task_name + "\x1f" + tpl.name);
            SplitMix64 rng(sub);
            std::vector<std::size_t> picked =
                sample_without_replacement(ds.examples.size(), cap_per_template, rng);
            for (std::size_t i : picked)
                result.examples.push_back(instantiate(tpl, ds.examples[i], ds.task_name));
            result.manifest.push_back({ds.task_name, tpl.name, picked.size(), sub});
        }
    }
    SplitMix64 shuffle_rng(derive_seed(seed, "mixture-shuffle"));
    fisher_yates(result.examples, shuffle_rng);
    return result;
}

// ---- file formats ----

// Dataset file: JSONL, one flat string-valued object per line, UTF-8.
inline std::vector<FieldMap> load_jsonl(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot read dataset file: " + path);
    std::vector<FieldMap> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        if (!j.is_object())
            throw DataError(path + ":" + std::to_string(lineno) + ": expected a JSON object");
        FieldMap fm;
        for (auto it = j.begin(); it != j.end(); ++it) {
            if (!it.value().is_string())
                throw DataError(path + ":" + std::to_string(lineno) + ": field '" + it.key() +
                                "' must be a string");
            fm[it.key()] = it.value().get<std::string>();
        }
        out.push_back(std::move(fm));
    }
    return out;
}

// Template file: one task per JSON document.
inline std::vector<PromptTemplate> load_templates(const std::string& path,
                                                  std::string* task_name_out = nullptr) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot read template file: " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": " + e.what());
    }
    if (task_name_out && j.contains("task_name"))
        *task_name_out = j["task_name"].get<std::string>();
    if (!j.contains("templates") || !j["templates"].is_array())
        throw DataError(path + ": missing 'templates' array");
    std::vector<PromptTemplate> out;
    for (const auto& tj : j["templates"]) {
        std::vector<std::string> choices;
        if (tj.contains("answer_choices")) {
            for (const auto& c : tj["answer_choices"]) choices.push_back(c.get<std::string>());
            if (choices.empty())
                throw DataError(path + ": answer_choices present but empty");
        }
        try {
            out.push_back(make_template(tj.at("name").get<std::string>(),
                                        tj.at("input_template").get<std::string>(),
                                        tj.at("target_template").get<std::string>(), choices));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ": " + e.what());
        }
    }
    if (out.empty()) throw DataError(path + ": no templates defined");
    return out;
}

// Checks that every example supplies every field referenced by every
// template of the task, so instantiation is total over the dataset.
inline TaskDataset load_task_dataset(const std::string& task_name, const std::string& split,
                                     const std::string& jsonl_path,
                                     const std::vector<PromptTemplate>& templates) {
    TaskDataset ds;
    ds.task_name = task_name;
    ds.split = split;
    ds.templates = templates;
    ds.examples = load_jsonl(jsonl_path);
    std::vector<std::string> fields;
    for (const auto& tpl : templates) {
        collect_fields(tpl.input_template, fields);
        collect_fields(tpl.target_template, fields);
        for (const auto& c : tpl.answer_choices) collect_fields(c, fields);
    }
    for (std::size_t i = 0; i < ds.examples.size(); ++i)
        for (const std::string& field : fields)
            if (!ds.examples[i].count(field))
                throw DataError(jsonl_path + ": example " + std::to_string(i + 1) +
                                " is missing field '" + field + "' required by task '" +
                                task_name + "'");
    return ds;
}

inline void write_mixture_manifest(const std::vector<MixtureEntry>& manifest,
                                   std::uint64_t seed, const std::string& path) {
    nlohmann::json j;
    j["seed"] = seed;
    j["entries"] = nlohmann::json::array();
    for (const auto& e : manifest) {
        nlohmann::json ej;
        ej["task"] = e.task;
        ej["template"] = e.prompt_template;
        ej["count"] = e.count;
        ej["seed"] = e.seed;
        j["entries"].push_back(ej);
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write mixture manifest: " + path);
    f << j.dump(2) << '\n';
}

}  // namespace spt
