#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "prefalign/corpus.hpp"
#include "prefalign/errors.hpp"

namespace prefalign {

// ---------------------------------------------------------------------------
// Template registry
// ---------------------------------------------------------------------------

enum class TemplateId {
    lettinggo_profile,
    lettinggo_predict,
    kar_profile,
    palr_profile,
    rlmrec_profile,
};

inline const char* to_string(TemplateId id) {
    switch (id) {
        case TemplateId::lettinggo_profile: return "lettinggo_profile";
        case TemplateId::lettinggo_predict: return "lettinggo_predict";
        case TemplateId::kar_profile: return "kar_profile";
        case TemplateId::palr_profile: return "palr_profile";
        case TemplateId::rlmrec_profile: return "rlmrec_profile";
    }
    return "?";
}

inline TemplateId template_id_from_string(std::string_view s) {
    if (s == "lettinggo_profile") return TemplateId::lettinggo_profile;
    if (s == "lettinggo_predict") return TemplateId::lettinggo_predict;
    if (s == "kar_profile") return TemplateId::kar_profile;
    if (s == "palr_profile") return TemplateId::palr_profile;
    if (s == "rlmrec_profile") return TemplateId::rlmrec_profile;
    throw ContractError("unknown template id: '" + std::string(s) + "'");
}

constexpr std::array<TemplateId, 5> kAllTemplates = {
    TemplateId::lettinggo_profile, TemplateId::lettinggo_predict, TemplateId::kar_profile,
    TemplateId::palr_profile, TemplateId::rlmrec_profile};

// Slot syntax is {{slot_name}}. Substitution is a single pass over the
// template, so slot-like text inside substituted values (or literal braces in
// the templates themselves) is never re-expanded.

inline constexpr const char* kProfileTemplate =
    "You will serve as an assistant to help me generate a user profile based on this user's "
    "sentiments history to better understand this users' interest and thus predict his/her "
    "sentiment about a target item. I will provide you with some behavior history of the user "
    "in this format: [item attributes and sentiment].The user profile you generate should "
    "contain as much useful content as possible to help predict the user's sentiment towards "
    "a new business.\n"
    "USER HISTORY:\n"
    "{{user_history}}.\n"
    "PROFILE YOU GENERATE:";

inline constexpr const char* kPredictTemplate =
    "Given a user's past sentiments towards other items (sorted by time,from earliest to "
    "latest) in the format: [item attributes and sentiment], and a user profile which depict "
    "the user's interest about items, your task is helping me predict a user's possible "
    "sentiment about a target item based on these information in one word. The sentiment has "
    "three categories: like, neutral, and dislike. Remember, your output should only contain "
    "one word (like, neutral or dislike, in lowercase) that represent user sentiment you "
    "predict, without any additional content.\n"
    "USER HISTORY:\n"
    "{{user_history}}.\n"
    "USER PROFILE:\n"
    "{{user_profile}}.\n"
    "The candidate item is: {{target_item}}.";

/// 10H variant: same instruction without the profile clause or profile block.
inline constexpr const char* kPredictTemplateNoProfile =
    "Given a user's past sentiments towards other items (sorted by time,from earliest to "
    "latest) in the format: [item attributes and sentiment], your task is helping me predict "
    "a user's possible sentiment about a target item based on these information in one word. "
    "The sentiment has three categories: like, neutral, and dislike. Remember, your output "
    "should only contain one word (like, neutral or dislike, in lowercase) that represent "
    "user sentiment you predict, without any additional content.\n"
    "USER HISTORY:\n"
    "{{user_history}}.\n"
    "The candidate item is: {{target_item}}.";

inline constexpr const char* kKarTemplate =
    "Given the user's business reviewing history with sentiments over time, listed below: "
    "{{user_history}}, analyze the user's preferences, taking into account factors such as "
    "business name and categories.\n"
    "Provide clear explanations based on the details from the user's reviewing history and "
    "other pertinent factors.";

inline constexpr const char* kPalrTemplate =
    "Your task is to use keywords to summarize user's preference based on history "
    "interations. The Output is an itemized list based on importance. The output template is "
    "{{1.KEY_WORD_1:\"HISTORY_BUSINESS_1\",\"HISTORY_BUSIN ESS_2\"; "
    "2.KEY_WORD_2:\"HISTORY_BUSINESS_3\"}}\n"
    "The history businessed and their keywords and user' semtiment are:\n"
    "{{user_history}}";

inline constexpr const char* kRlmrecTemplate =
    "You will serve as an assistant to help me determine which types of businesses a specific "
    "user is likely to enjoy. I will provide you with information about businesses that the "
    "user has visited, as well as his or her sentiments of those businesses. Here are the "
    "instructions: 1. Each visited businesse will be described in the format with the "
    "following attributes: Title:the name of the business, Categories:the categories of the "
    "business, Sentiment:user semtiment toward business. 2. The information I will give you: "
    "INTERATION ITEMS: a list of JSON strings describing the items that the user has visited. "
    "Requirements: 1. Please provide your decision in JSON format, following this structure: "
    "{{ \"summarization\": \"A summarization of what types of businesses this user is likely "
    "to enjoy\" (if you are unable to summarize it, please set this value to \"None\") "
    "\"reasoning\": \"briefly explain your reasoning for the summarization\" }} 2. Please "
    "ensure that the \"summarization\" is no longer than 100 words. 3. The \"reasoning\" has "
    "no word limits. 4. Do not provided any other text outside the JSON string.\n"
    "{{user_history}}";

inline std::string registered_template(TemplateId id) {
    switch (id) {
        case TemplateId::lettinggo_profile: return kProfileTemplate;
        case TemplateId::lettinggo_predict: return kPredictTemplate;
        case TemplateId::kar_profile: return kKarTemplate;
        case TemplateId::palr_profile: return kPalrTemplate;
        case TemplateId::rlmrec_profile: return kRlmrecTemplate;
    }
    throw ContractError("unknown template id");
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

/// ceil(bytes / 4). Model-free length heuristic; reported figures using it
/// are estimates, not tokenizer counts.
inline std::size_t estimate_tokens(std::string_view text) { return (text.size() + 3) / 4; }

enum class Role { system, user };

struct PromptMeta {
    TemplateId template_id = TemplateId::lettinggo_profile;
    std::string user_id;
    std::size_t window = 0;  // W for profile prompts, K for prediction prompts
    std::size_t estimated_tokens = 0;
};

/// Fully rendered prompt. The whole prompt is one user-role segment; the
/// segments concatenated equal `text`.
struct RenderedPrompt {
    std::string text;
    std::vector<std::pair<Role, std::string>> role_layout;
    PromptMeta meta;
};

namespace detail {

/// Single-pass substitution: occurrences of {{name}} present in the template
/// are spliced with the value; inserted values are never rescanned.
inline std::string substitute(std::string_view tmpl,
                              const std::vector<std::pair<std::string, std::string>>& slots) {
    std::string out;
    out.reserve(tmpl.size());
    std::size_t pos = 0;
    while (pos < tmpl.size()) {
        std::size_t open = tmpl.find("{{", pos);
        if (open == std::string_view::npos) {
            out.append(tmpl.substr(pos));
            break;
        }
        std::size_t close = tmpl.find("}}", open + 2);
        bool replaced = false;
        if (close != std::string_view::npos) {
            std::string_view name = tmpl.substr(open + 2, close - open - 2);
            for (const auto& [slot, value] : slots) {
                if (name == slot) {
                    out.append(tmpl.substr(pos, open - pos));
                    out.append(value);
                    pos = close + 2;
                    replaced = true;
                    break;
                }
            }
        }
        if (!replaced) {
            // Literal braces (e.g. an embedded output-format example); keep
            // them and continue scanning after the opening pair.
            out.append(tmpl.substr(pos, open + 2 - pos));
            pos = open + 2;
        }
    }
    return out;
}

inline RenderedPrompt finish(std::string text, TemplateId id, std::string user_id,
                             std::size_t window) {
    RenderedPrompt p;
    p.meta.template_id = id;
    p.meta.user_id = std::move(user_id);
    p.meta.window = window;
    p.meta.estimated_tokens = estimate_tokens(text);
    p.role_layout.emplace_back(Role::user, text);
    p.text = std::move(text);
    return p;
}

}  // namespace detail

enum class HistoryOrder { earliest_first, latest_first };

/// One line per record: attribute pairs in stored order, then the sentiment.
/// "Title: X; Genre: Y; Sentiment: like". Storage is most-recent-first, so
/// earliest_first reverses the record order.
inline std::string render_history_lines(const std::vector<InteractionRecord>& records,
                                        HistoryOrder order) {
    if (records.empty()) throw ContractError("render_history_lines: empty history");
    std::string out;
    auto emit = [&](const InteractionRecord& r) {
        if (!out.empty()) out.push_back('\n');
        for (const auto& [name, value] : r.attributes) {
            out += name;
            out += ": ";
            out += value;
            out += "; ";
        }
        out += "Sentiment: ";
        out += to_string(r.sentiment);
    };
    if (order == HistoryOrder::earliest_first) {
        for (auto it = records.rbegin(); it != records.rend(); ++it) emit(*it);
    } else {
        for (const auto& r : records) emit(r);
    }
    return out;
}

/// Target-item line: same attribute format as history lines, no sentiment.
inline std::string render_item_line(const InteractionRecord& record) {
    std::string out;
    for (const auto& [name, value] : record.attributes) {
        if (!out.empty()) out += "; ";
        out += name;
        out += ": ";
        out += value;
    }
    return out;
}

inline RenderedPrompt render_profile_prompt(const std::string& long_history_text,
                                            std::string user_id = {}, std::size_t window_w = 0) {
    if (long_history_text.empty())
        throw ContractError("render_profile_prompt: empty history text");
    std::string text =
        detail::substitute(kProfileTemplate, {{"user_history", long_history_text}});
    return detail::finish(std::move(text), TemplateId::lettinggo_profile, std::move(user_id),
                          window_w);
}

inline RenderedPrompt render_prediction_prompt(const std::string& recent_history_text,
                                               const std::optional<std::string>& profile_text,
                                               const std::string& target_item_text,
                                               std::string user_id = {}, std::size_t k = 0) {
    if (recent_history_text.empty())
        throw ContractError("render_prediction_prompt: empty history text");
    if (target_item_text.empty())
        throw ContractError("render_prediction_prompt: empty target item text");
    std::string text;
    if (profile_text.has_value()) {
        text = detail::substitute(kPredictTemplate, {{"user_history", recent_history_text},
                                                     {"user_profile", *profile_text},
                                                     {"target_item", target_item_text}});
    } else {
        text = detail::substitute(kPredictTemplateNoProfile,
                                  {{"user_history", recent_history_text},
                                   {"target_item", target_item_text}});
    }
    return detail::finish(std::move(text), TemplateId::lettinggo_predict, std::move(user_id), k);
}

inline RenderedPrompt render_baseline_profile_prompt(TemplateId kind,
                                                     const std::string& history_text,
                                                     std::string user_id = {},
                                                     std::size_t window_w = 0) {
    if (kind != TemplateId::kar_profile && kind != TemplateId::palr_profile &&
        kind != TemplateId::rlmrec_profile)
        throw ContractError("render_baseline_profile_prompt: not a baseline template");
    std::string text =
        detail::substitute(registered_template(kind), {{"user_history", history_text}});
    return detail::finish(std::move(text), kind, std::move(user_id), window_w);
}

}  // namespace prefalign
