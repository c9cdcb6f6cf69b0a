#include "selfcheck.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace fev {

namespace {

void require(bool ok, const std::string& slot) {
  if (!ok) throw std::invalid_argument("render_prompt: missing slot '" + slot + "'");
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

// The adjective describing marked words follows the marker token.
std::string token_word(const std::string& token) {
  return token == "[REMOVED]" ? "removed" : "redacted";
}

std::string quoted(const std::string& s) { return "\"" + s + "\""; }

// a) "x", b) "y", ..., plus the trailing unknown option letter.
std::string choice_menu(const std::vector<std::string>& choices) {
  std::string out;
  char letter = 'a';
  for (const auto& c : choices) {
    out += std::string(1, letter++) + ") " + quoted(c) + ", ";
  }
  out += "or " + std::string(1, letter) + ") \"unknown\" if the question can not be answered";
  return out;
}

// a) "x", and b) "y" (options offered to an implicit-target edit request).
std::string choice_options(const std::vector<std::string>& choices) {
  std::string out;
  char letter = 'a';
  for (std::size_t i = 0; i < choices.size(); ++i) {
    if (i + 1 == choices.size()) out += "and ";
    out += std::string(1, letter++) + ") " + quoted(choices[i]);
    if (i + 1 < choices.size()) out += ", ";
  }
  return out;
}

std::string render_sentiment(const PromptSpec& s) {
  const std::string tail = " Do not explain the answer.\n\nParagraph: " + s.paragraph;
  switch (s.kind) {
    case ExplanationKind::Classification: {
      std::string head;
      switch (s.persona) {
        case Persona::Objective:
          head = "What is the sentiment of the following paragraph?";
          break;
        case Persona::Human:
          head = "What would a human classify the sentiment of the following paragraph as?";
          break;
        case Persona::You:
          head = "What would you classify the sentiment of the following paragraph as?";
          break;
      }
      return head + " The paragraph can contain " + token_word(s.redaction_token) +
             " words marked with " + s.redaction_token +
             ". Answer only \"positive\", \"negative\", \"neutral\", or \"unknown\"." + tail;
    }
    case ExplanationKind::Counterfactual: {
      std::string head;
      if (s.target == CounterfactualTarget::Explicit) {
        require(!s.target_label.empty(), "target_label");
        switch (s.persona) {
          case Persona::Objective:
            head = "Edit the following paragraph such that the sentiment is " +
                   quoted(s.target_label) + ".";
            break;
          case Persona::Human:
            head = "Edit the following paragraph such a human would classify the sentiment is " +
                   quoted(s.target_label) + ".";
            break;
          case Persona::You:
            head = "Edit the following paragraph such you would classify the sentiment is " +
                   quoted(s.target_label) + ".";
            break;
        }
      } else {
        switch (s.persona) {
          case Persona::Objective:
            head =
                "Edit the following paragraph such that the sentiment becomes the opposite of "
                "what it currently is.";
            break;
          case Persona::Human:
            head =
                "Edit the following paragraph such a human would classify the as the opposite of "
                "what it currently is.";
            break;
          case Persona::You:
            head =
                "Edit the following paragraph such you would classify the sentiment as the "
                "opposite of what it currently is.";
            break;
        }
      }
      return head + " Make as few edits as possible." + tail;
    }
    case ExplanationKind::FeatureAttribution:
    case ExplanationKind::Redaction: {
      std::string without;
      switch (s.persona) {
        case Persona::Objective:
          without = "the sentiment can not be determined";
          break;
        case Persona::Human:
          without = "a human can not determine the sentiment";
          break;
        case Persona::You:
          without = "you can not determine the sentiment";
          break;
      }
      if (s.kind == ExplanationKind::FeatureAttribution)
        return "List the most important words for determining the sentiment of the following "
               "paragraph, such that without these words " +
               without + "." + tail;
      return "Redact the most important words for determining the sentiment of the following "
             "paragraph, by replacing important words with " +
             s.redaction_token + ", such that without these words " + without + "." + tail;
    }
  }
  throw std::logic_error("render_sentiment: unreachable");
}

std::string render_multichoice(const PromptSpec& s) {
  require(!s.question.empty(), "question");
  const std::string tail = " Do not explain the answer.\n\nParagraph: " + s.paragraph;
  switch (s.kind) {
    case ExplanationKind::Classification: {
      require(s.choices.size() >= 2, "choices");
      std::string head;
      switch (s.persona) {
        case Persona::Objective:
          head = "Consider the following paragraph, and answer the question: " + quoted(s.question);
          break;
        case Persona::Human:
          head = "Consideing the following paragraph, how would a human answer the question: " +
                 quoted(s.question);
          break;
        case Persona::You:
          head = "Consideing the following paragraph, how would you answer the question: " +
                 quoted(s.question);
          break;
      }
      return head + " The paragraph can contain " + token_word(s.redaction_token) +
             " words marked with " + s.redaction_token + ". Answer either " +
             choice_menu(s.choices) + "." + tail;
    }
    case ExplanationKind::Counterfactual: {
      std::string head;
      if (s.target == CounterfactualTarget::Explicit) {
        require(!s.target_label.empty(), "target_label");
        switch (s.persona) {
          case Persona::Objective:
            head = "Edit the following paragraph such that the answer to the question " +
                   quoted(s.question) + " is " + quoted(s.target_label) + ".";
            break;
          case Persona::Human:
            head = "Edit the following paragraph such a human would answer the question " +
                   quoted(s.question) + " with " + quoted(s.target_label) + ".";
            break;
          case Persona::You:
            head = "Edit the following paragraph such you would answer the question " +
                   quoted(s.question) + " with " + quoted(s.target_label) + ".";
            break;
        }
      } else {
        require(s.choices.size() >= 2, "choices");
        std::string options = " The possible answer options, including the current answer, are " +
                              choice_options(s.choices) + ".";
        switch (s.persona) {
          case Persona::Objective:
            head = "Edit the following paragraph such that the answer to the question " +
                   quoted(s.question) + " is different from how it should currently be answered." +
                   options;
            break;
          case Persona::Human:
            head = "Edit the following paragraph such a human would answer the question " +
                   quoted(s.question) + " differently from how it should currently be answered." +
                   options;
            break;
          case Persona::You:
            head = "Edit the following paragraph such you would answer the question " +
                   quoted(s.question) + " differently from how it should currently be answered." +
                   options;
            break;
        }
      }
      return head + " Make as few edits as possible." + tail;
    }
    case ExplanationKind::FeatureAttribution:
    case ExplanationKind::Redaction: {
      std::string without;
      switch (s.persona) {
        case Persona::Objective:
          without = "the question can not be answered";
          break;
        case Persona::Human:
          without = "a human can not answer the question";
          break;
        case Persona::You:
          without = "you can not answer the question";
          break;
      }
      if (s.kind == ExplanationKind::FeatureAttribution)
        return "List the most important words for answering " + quoted(s.question) +
               " given the following paragraph, such that without these words " + without + "." +
               tail;
      return "Redact the most important words for answering " + quoted(s.question) +
             " given the following paragraph, by replacing important words with " +
             s.redaction_token + ", such that without these words " + without + "." + tail;
    }
  }
  throw std::logic_error("render_multichoice: unreachable");
}

std::string render_nli(const PromptSpec& s) {
  require(!s.statement.empty(), "statement");
  const std::string tail = " Do not explain the answer.\n\nParagraph: " + s.paragraph;
  switch (s.kind) {
    case ExplanationKind::Classification: {
      std::string head;
      switch (s.persona) {
        case Persona::Objective:
          head = "Does the statement " + quoted(s.statement) +
                 " entail from the following paragraph?";
          break;
        case Persona::Human:
          head = "Does a human think the statement " + quoted(s.statement) +
                 " entail from the following paragraph?";
          break;
        case Persona::You:
          head = "Do you think the statement " + quoted(s.statement) +
                 " entail from the following paragraph?";
          break;
      }
      return head + " The paragraph can contain " + token_word(s.redaction_token) +
             " words marked with " + s.redaction_token +
             ". Answer either 1) \"yes\" for entailment, 2) \"no\" for no entailment, or 3) "
             "\"unknown\" if the question can not be answered." +
             tail;
    }
    case ExplanationKind::Counterfactual: {
      std::string head;
      if (s.target == CounterfactualTarget::Explicit) {
        require(!s.target_label.empty(), "target_label");
        // The requested entailment direction selects the clause.
        std::string verb = lower(s.target_label) == "yes" ? "entails" : "does not entails";
        switch (s.persona) {
          case Persona::Objective:
            head = "Edit the following paragraph such that the statement " + quoted(s.statement) +
                   " " + verb + " from it.";
            break;
          case Persona::Human:
            head = "Edit the following paragraph such that a human would say the statement " +
                   quoted(s.statement) + " " + verb + " from it.";
            break;
          case Persona::You:
            head = "Edit the following paragraph such that you would say the statement " +
                   quoted(s.statement) + " " + verb + " from it.";
            break;
        }
      } else {
        std::string lead = "Edit the following paragraph, such that given the statement " +
                           quoted(s.statement) + ", ";
        switch (s.persona) {
          case Persona::Objective:
            head = lead + "the entailment becomes the opposite of what it currently is.";
            break;
          case Persona::Human:
            head = lead + "a human would say the entailment is the opposite of what it currently is.";
            break;
          case Persona::You:
            head = lead + "you would say the entailment is the opposite of what it currently is.";
            break;
        }
      }
      return head + " Make as few edits as possible." + tail;
    }
    case ExplanationKind::FeatureAttribution:
    case ExplanationKind::Redaction: {
      std::string without;
      switch (s.persona) {
        case Persona::Objective:
          without = "it can not be determined if there is entailment or no entailment";
          break;
        case Persona::Human:
          // The list variant's garbled clause is intentional: it reproduces
          // the recorded template verbatim. The redaction variant is clean.
          without = s.kind == ExplanationKind::FeatureAttribution
                        ? "you a human not determine if there is entailment or no entailment"
                        : "a human can not determine if there is entailment or no entailment";
          break;
        case Persona::You:
          without = "you can not determine if there is entailment or no entailment";
          break;
      }
      if (s.kind == ExplanationKind::FeatureAttribution)
        return "List the most important words in the following paragraph, for determining if the "
               "statement " +
               quoted(s.statement) + " entails from it, such that without these words " + without +
               "." + tail;
      return "Redact the most important words in the following paragraph, for determining if the "
             "statement " +
             quoted(s.statement) + " entails from it, by replacing important words with " +
             s.redaction_token + ", such that without these words " + without + "." + tail;
    }
  }
  throw std::logic_error("render_nli: unreachable");
}

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

// Case-insensitive whole-word occurrence check.
bool contains_word(const std::string& haystack, const std::string& needle) {
  if (needle.empty()) return false;
  std::size_t pos = 0;
  while ((pos = haystack.find(needle, pos)) != std::string::npos) {
    bool left_ok = pos == 0 || !is_word_char(haystack[pos - 1]);
    std::size_t end = pos + needle.size();
    bool right_ok = end >= haystack.size() || !is_word_char(haystack[end]);
    if (left_ok && right_ok) return true;
    ++pos;
  }
  return false;
}

std::string strip_word(const std::string& raw) {
  static const std::string junk = " \t\r\n\"'.,;:!?*()";
  std::size_t a = raw.find_first_not_of(junk);
  if (a == std::string::npos) return "";
  std::size_t b = raw.find_last_not_of(junk);
  return lower(raw.substr(a, b - a + 1));
}

std::vector<std::string> split_paragraphs(const std::string& text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t next = text.find("\n\n", pos);
    if (next == std::string::npos) {
      out.push_back(text.substr(pos));
      break;
    }
    out.push_back(text.substr(pos, next - pos));
    pos = next + 2;
  }
  return out;
}

}  // namespace

std::string render_prompt(const PromptSpec& spec) {
  require(!spec.paragraph.empty(), "paragraph");
  switch (spec.task) {
    case ChatTask::Sentiment: return render_sentiment(spec);
    case ChatTask::MultiChoice: return render_multichoice(spec);
    case ChatTask::Nli: return render_nli(spec);
  }
  throw std::logic_error("render_prompt: unreachable");
}

std::vector<std::string> task_labels(ChatTask task, const std::vector<std::string>& choices) {
  switch (task) {
    case ChatTask::Sentiment: return {"positive", "negative", "neutral", "unknown"};
    case ChatTask::Nli: return {"yes", "no", "unknown"};
    case ChatTask::MultiChoice: {
      std::vector<std::string> labels;
      for (const auto& c : choices) labels.push_back(lower(c));
      labels.push_back("unknown");
      return labels;
    }
  }
  throw std::logic_error("task_labels: unreachable");
}

ParsedLabel parse_label(const std::string& response, ChatTask task,
                        const std::vector<std::string>& choices) {
  std::size_t stop = response.find('.');
  std::string sentence =
      lower(stop == std::string::npos ? response : response.substr(0, stop + 1));
  ParsedLabel out;
  for (const auto& label : task_labels(task, choices)) {
    if (contains_word(sentence, label)) {
      if (out.parseable && out.label != label) return {};  // conflicting labels
      out.label = label;
      out.parseable = true;
    }
  }
  return out;
}

ExtractedExplanation extract_explanation(const std::string& response, ExplanationKind kind) {
  ExtractedExplanation out;
  if (kind == ExplanationKind::FeatureAttribution) {
    std::istringstream lines(response);
    std::string line;
    std::vector<std::string> items;
    while (std::getline(lines, line)) {
      std::string t = trim(line);
      if (t.empty()) continue;
      std::size_t body = std::string::npos;
      if (t[0] == '*' || t[0] == '-') {
        body = 1;
      } else if (std::isdigit(static_cast<unsigned char>(t[0]))) {
        std::size_t d = t.find_first_not_of("0123456789");
        if (d != std::string::npos && (t[d] == '.' || t[d] == ')')) body = d + 1;
      }
      if (body != std::string::npos) {
        std::string word = strip_word(t.substr(body));
        if (!word.empty()) items.push_back(word);
      }
    }
    std::size_t colon = response.rfind(':');
    if (items.empty() && colon != std::string::npos) {
      // Fall back to a comma-separated list after the last colon. Free text
      // without any list structure stays unparseable.
      std::istringstream parts(response.substr(colon + 1));
      std::string piece;
      while (std::getline(parts, piece, ',')) {
        std::string word = strip_word(piece);
        if (!word.empty()) items.push_back(word);
      }
    }
    out.words = std::move(items);
    out.parseable = !out.words.empty();
    return out;
  }

  static const std::string marker = "Paragraph:";
  std::size_t pos = response.rfind(marker);
  if (pos != std::string::npos) {
    out.paragraph = trim(response.substr(pos + marker.size()));
  } else {
    // Skip leading intro paragraphs ("Sure! Here's ...:") and keep the rest.
    auto paragraphs = split_paragraphs(response);
    std::size_t first = 0;
    while (first < paragraphs.size()) {
      std::string t = trim(paragraphs[first]);
      if (!t.empty() && t.back() != ':') break;
      ++first;
    }
    std::string joined;
    for (std::size_t i = first; i < paragraphs.size(); ++i) {
      if (i > first) joined += "\n\n";
      joined += paragraphs[i];
    }
    out.paragraph = trim(joined);
  }
  out.parseable = !out.paragraph.empty();
  return out;
}

RedactionResult apply_redaction(const std::string& paragraph,
                                const std::vector<std::string>& words,
                                const std::string& token) {
  std::vector<std::string> needles;
  for (const auto& w : words) {
    std::string n = strip_word(w);
    if (!n.empty()) needles.push_back(n);
  }
  std::vector<bool> matched(needles.size(), false);
  std::string low = lower(paragraph);

  RedactionResult out;
  std::size_t i = 0;
  while (i < paragraph.size()) {
    // Never rewrite inside an already-placed token.
    if (!token.empty() && paragraph.compare(i, token.size(), token) == 0) {
      out.text += token;
      i += token.size();
      continue;
    }
    bool replaced = false;
    if (i == 0 || !is_word_char(paragraph[i - 1])) {
      std::size_t best = 0, best_idx = needles.size();
      for (std::size_t w = 0; w < needles.size(); ++w) {
        const std::string& n = needles[w];
        if (n.size() <= best) continue;
        if (low.compare(i, n.size(), n) != 0) continue;
        std::size_t end = i + n.size();
        if (end < paragraph.size() && is_word_char(paragraph[end])) continue;
        best = n.size();
        best_idx = w;
      }
      if (best_idx < needles.size()) {
        out.text += token;
        matched[best_idx] = true;
        ++out.replaced;
        i += best;
        replaced = true;
        // Longest match wins, but credit every needle covered here.
        for (std::size_t w = 0; w < needles.size(); ++w)
          if (!matched[w] && needles[w].size() == best && low.compare(i - best, best, needles[w]) == 0)
            matched[w] = true;
      }
    }
    if (!replaced) {
      out.text += paragraph[i];
      ++i;
    }
  }
  for (bool m : matched)
    if (!m) ++out.unmatched_words;
  return out;
}

ScriptedBackend ScriptedBackend::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("ScriptedBackend: cannot open " + path);
  nlohmann::json j;
  in >> j;
  std::map<std::string, std::string> responses;
  for (const auto& turn : j.at("turns"))
    responses[turn.at("prompt").get<std::string>()] = turn.at("response").get<std::string>();
  return ScriptedBackend(std::move(responses));
}

std::string ScriptedBackend::generate(const std::string& prompt) {
  prompts_seen_.push_back(prompt);
  auto it = responses_.find(prompt);
  if (it == responses_.end())
    throw std::runtime_error("ScriptedBackend: no scripted response for prompt: " +
                             prompt.substr(0, 120));
  return it->second;
}

HttpBackend::HttpBackend(std::string host, int port, std::string path, GenerationParams params)
    : host_(std::move(host)), path_(std::move(path)), port_(port), params_(params) {}

std::string HttpBackend::generate(const std::string& prompt) {
  nlohmann::json body = {{"inputs", prompt},
                         {"parameters",
                          {{"temperature", params_.temperature},
                           {"top_p", params_.top_p},
                           {"repetition_penalty", params_.repetition_penalty},
                           {"top_k", params_.top_k},
                           {"seed", params_.seed}}}};
  std::string payload = body.dump();

  std::string last_error;
  for (int attempt = 0; attempt <= 3; ++attempt) {
    if (attempt > 0)
      std::this_thread::sleep_for(std::chrono::milliseconds(250 << (attempt - 1)));
    httplib::Client client(host_, port_);
    client.set_read_timeout(300, 0);
    auto res = client.Post(path_, payload, "application/json");
    if (!res) {
      last_error = "transport error " + httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      last_error = "HTTP status " + std::to_string(res->status);
      continue;
    }
    auto j = nlohmann::json::parse(res->body);
    return j.at("generated_text").get<std::string>();
  }
  throw std::runtime_error("HttpBackend: request failed after retries: " + last_error);
}

SelfConsistencyRecord evaluate_self_consistency(ChatBackend& backend,
                                                const SelfCheckExample& example,
                                                const PromptSpec& spec,
                                                const SelfCheckOptions& opts) {
  SelfConsistencyRecord rec;
  rec.id = example.id;
  std::string gold = lower(example.gold_label);

  PromptSpec base = spec;
  base.paragraph = example.paragraph;
  base.question = example.question;
  base.choices = example.choices;
  base.statement = example.statement;

  PromptSpec classify = base;
  classify.kind = ExplanationKind::Classification;

  // Session 1: does the model reproduce the gold label on the intact input?
  auto first = parse_label(backend.generate(render_prompt(classify)), spec.task, example.choices);
  if (!first.parseable) {
    rec.discard_reason = "initial answer unparseable";
    return rec;
  }
  rec.prediction = first.label;
  rec.correct = first.label == gold;
  if (!rec.correct) {
    rec.discard_reason = "initial answer incorrect";
    return rec;
  }

  // Session 2: ask for the explanation.
  PromptSpec explain = base;
  if (explain.kind == ExplanationKind::Counterfactual &&
      explain.target == CounterfactualTarget::Explicit && explain.target_label.empty()) {
    // Default explicit target: any valid label other than gold and unknown.
    for (const auto& label : task_labels(spec.task, example.choices))
      if (label != gold && label != "unknown" && label != "neutral") {
        explain.target_label = label;
        break;
      }
  }
  auto extracted = extract_explanation(backend.generate(render_prompt(explain)), spec.kind);
  if (!extracted.parseable) {
    rec.discard_reason = "explanation unparseable";
    return rec;
  }

  std::string transformed;
  if (spec.kind == ExplanationKind::FeatureAttribution) {
    auto redacted = apply_redaction(example.paragraph, extracted.words, spec.redaction_token);
    transformed = redacted.text;
  } else {
    transformed = extracted.paragraph;
  }
  rec.explanation = transformed;

  // Session 3: re-classify the transformed input.
  PromptSpec recheck = classify;
  recheck.paragraph = transformed;
  auto post = parse_label(backend.generate(render_prompt(recheck)), spec.task, example.choices);
  if (!post.parseable) {
    rec.discard_reason = "post answer unparseable";
    return rec;
  }
  rec.post_prediction = post.label;
  rec.defined = true;

  if (spec.kind == ExplanationKind::Counterfactual) {
    if (spec.target == CounterfactualTarget::Explicit) {
      rec.faithful = post.label == lower(explain.target_label);
    } else {
      // Implicit target: any real alternative answer counts.
      rec.faithful = post.label != gold && post.label != "unknown";
    }
    if (rec.faithful) rec.matched_target = post.label;
  } else {
    rec.faithful = opts.strict_unknown ? post.label == "unknown" : post.label != gold;
  }
  return rec;
}

FaithfulnessRatio faithfulness_ratio(const std::vector<SelfConsistencyRecord>& records) {
  FaithfulnessRatio out;
  for (const auto& rec : records) {
    if (!rec.discard_reason.empty() || !rec.defined) {
      ++out.discarded;
      continue;
    }
    ++out.total_defined;
    if (rec.faithful) ++out.faithful;
  }
  out.defined = out.total_defined > 0;
  if (out.defined)
    out.ratio = static_cast<double>(out.faithful) / static_cast<double>(out.total_defined);
  return out;
}

}  // namespace fev
