#pragma once

// Self-explanation faithfulness for chat models: prompt rendering, response
// parsing, redaction, and the three-session self-consistency protocol against
// a pluggable chat backend.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace fev {

enum class ChatTask { Sentiment, MultiChoice, Nli };
enum class ExplanationKind { Classification, Counterfactual, FeatureAttribution, Redaction };
enum class Persona { Objective, Human, You };
enum class CounterfactualTarget { Explicit, Implicit };

struct PromptSpec {
  ChatTask task = ChatTask::Sentiment;
  ExplanationKind kind = ExplanationKind::Classification;
  Persona persona = Persona::Objective;
  std::string redaction_token = "[REDACTED]";  // or "[REMOVED]"
  CounterfactualTarget target = CounterfactualTarget::Explicit;

  // Slots. Which ones are required depends on the task and kind.
  std::string paragraph;
  std::string question;               // multi-choice
  std::vector<std::string> choices;   // multi-choice
  std::string statement;              // NLI
  std::string target_label;           // explicit counterfactuals
};

// Byte-exact template instantiation. Throws std::invalid_argument naming any
// missing slot.
std::string render_prompt(const PromptSpec& spec);

// Valid answer labels for a task (lowercase), "unknown" included.
std::vector<std::string> task_labels(ChatTask task, const std::vector<std::string>& choices);

struct ParsedLabel {
  std::string label;  // lowercase; empty when unparseable
  bool parseable = false;
};

// Scans the first sentence for exactly one task label (case-insensitive,
// whole word, "b)"-style prefixes ignored). Conflicting labels or no label
// give an unparseable result.
ParsedLabel parse_label(const std::string& response, ChatTask task,
                        const std::vector<std::string>& choices = {});

struct ExtractedExplanation {
  std::string paragraph;            // counterfactual / redaction
  std::vector<std::string> words;   // feature attribution (lowercase)
  bool parseable = false;
};

// Counterfactual/redaction: text after the last "Paragraph:" marker, else
// everything after leading intro paragraphs that end with ':'. Feature
// attribution: bullet or numbered list items, else the comma-separated list
// after the last ':'; quotes and punctuation stripped.
ExtractedExplanation extract_explanation(const std::string& response, ExplanationKind kind);

struct RedactionResult {
  std::string text;
  int replaced = 0;
  int unmatched_words = 0;
};

// Case-insensitive whole-word replacement of every listed word. Idempotent.
RedactionResult apply_redaction(const std::string& paragraph,
                                const std::vector<std::string>& words,
                                const std::string& token);

// --- chat backends ----------------------------------------------------------------

struct GenerationParams {
  double temperature = 0.1;
  double top_p = 0.95;
  double repetition_penalty = 1.2;
  int top_k = 50;
  std::uint64_t seed = 0;
};

// One fresh session per call: a single user turn in, a single response out.
class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual std::string generate(const std::string& prompt) = 0;
};

// Canned prompt -> response fixtures for tests. Unknown prompts throw.
class ScriptedBackend : public ChatBackend {
 public:
  explicit ScriptedBackend(std::map<std::string, std::string> responses)
      : responses_(std::move(responses)) {}
  static ScriptedBackend from_file(const std::string& path);

  std::string generate(const std::string& prompt) override;
  const std::vector<std::string>& prompts_seen() const { return prompts_seen_; }

 private:
  std::map<std::string, std::string> responses_;
  std::vector<std::string> prompts_seen_;
};

// HTTP JSON text-generation endpoint. Retries transport errors up to 3 times
// with exponential backoff.
class HttpBackend : public ChatBackend {
 public:
  HttpBackend(std::string host, int port, std::string path = "/generate",
              GenerationParams params = {});
  std::string generate(const std::string& prompt) override;

 private:
  std::string host_, path_;
  int port_;
  GenerationParams params_;
};

// --- protocol ----------------------------------------------------------------------

struct SelfCheckExample {
  std::string id;
  std::string paragraph;
  std::string gold_label;             // lowercase
  std::string question;               // multi-choice
  std::vector<std::string> choices;   // multi-choice
  std::string statement;              // NLI
};

struct SelfConsistencyRecord {
  std::string id;
  std::string prediction;        // session 1
  bool correct = false;
  std::string explanation;       // transformed paragraph actually re-classified
  std::string post_prediction;   // session 3
  bool defined = false;          // faithful flag is meaningful
  bool faithful = false;
  std::string matched_target;    // counterfactuals: which label the re-check hit
  std::string discard_reason;    // nonempty when discarded
};

struct SelfCheckOptions {
  // Default faithfulness for feature attribution and redaction: any non-gold
  // answer. Strict mode requires exactly "unknown".
  bool strict_unknown = false;
};

// Three fresh sessions: classify, explain, re-classify the transformed input.
// Wrong or unparseable stages discard the record with a reason.
SelfConsistencyRecord evaluate_self_consistency(ChatBackend& backend,
                                                const SelfCheckExample& example,
                                                const PromptSpec& spec,
                                                const SelfCheckOptions& opts = {});

struct FaithfulnessRatio {
  double ratio = 0.0;
  bool defined = false;  // false when every record was discarded
  std::size_t faithful = 0;
  std::size_t total_defined = 0;
  std::size_t discarded = 0;
};

FaithfulnessRatio faithfulness_ratio(const std::vector<SelfConsistencyRecord>& records);

}  // namespace fev
