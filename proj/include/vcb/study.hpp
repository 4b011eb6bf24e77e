// SPDX-License-Identifier: Apache-2.0
//
// Forced-choice study harness. Each question shows a source image, four
// labelled reference pairs and one generated image; participants pick the
// pair they believe produced the image. "with_reference" images come from a
// common-mode blend with one pair; "baseline" images come from the source
// alone (theta = 0) and measure how often each pair is chosen without any
// transfer.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "vcb/generation.hpp"
#include "vcb/image.hpp"

namespace vcb {

class Pipeline;

inline constexpr std::size_t kPairsPerQuestion = 4;
inline constexpr std::array<const char*, kPairsPerQuestion> kPairLabels = {"i", "ii", "iii",
                                                                         "iv"};

enum class Condition { kWithReference, kBaseline };
std::string_view to_string(Condition c);
Condition parse_condition(std::string_view text);

struct RefPair {
  std::string label;
  ImageRef a;
  ImageRef b;
};

struct CategorySpec {
  std::string name;
  std::vector<ImageRef> sources;  // 3 in the reference protocol
  std::vector<RefPair> pairs;     // exactly 4
  double theta = 0.0;
  double d = 0.0;
};

// (theta, d) used per category in the reference study.
struct CategoryParams {
  double theta;
  double d;
};
std::optional<CategoryParams> reference_category_params(std::string_view category);

struct PairDigests {
  std::string label;
  std::string a_sha256;
  std::string b_sha256;
};

struct StudyQuestion {
  std::string question_id;
  std::string category;
  std::string source_sha256;
  std::string run_id;           // empty when generation failed
  std::string generated_image;  // path relative to the run store root
  std::vector<PairDigests> ref_pairs;
  // Index of the pair used to generate the image. Baseline images were made
  // without any pair, so they carry no correct index.
  std::optional<int> correct_index;
  Condition condition = Condition::kWithReference;
  bool complete = true;
  std::string error;

  nlohmann::json to_json() const;
  static StudyQuestion from_json(const nlohmann::json& j);
};

struct BuildOptions {
  GenSettings settings;
  // Questions for source s use seed base_seed + s, so a source's baseline and
  // with-reference images share the same noise.
  std::uint64_t base_seed = 0;
};

// Per category: sources x pairs with-reference questions followed by one
// baseline question per source. Generation failures mark the question
// incomplete instead of aborting the set.
std::vector<StudyQuestion> build_question_set(const std::vector<CategorySpec>& categories,
                                              Pipeline& pipeline,
                                              const BuildOptions& options);

struct StudyResponse {
  std::string response_id;
  std::string question_id;
  std::string participant_id;
  int chosen_index = 0;
  std::string timestamp;
};

// CSV with header participant_id,question_id,chosen_index. Extra trailing
// columns are ignored. When `salt` is non-empty, participant ids are replaced
// by anonymize_participant(id, salt).
std::vector<StudyResponse> parse_responses_csv(const std::string& text,
                                               const std::string& salt = {});
// Opaque id: first 16 hex digits of SHA-256(salt || ":" || raw_id).
std::string anonymize_participant(const std::string& raw_id, const std::string& salt);

struct ConditionResult {
  Condition condition = Condition::kWithReference;
  std::size_t n_responses = 0;
  std::size_t n_correct = 0;
  double accuracy() const;
};

/// Accuracies grouped by (category, condition) and by
/// (category, pair, condition). For baseline responses, the trial for pair k
/// counts as correct when pair k was chosen; each baseline response therefore
/// contributes one trial to every pair.
struct ScoreReport {
  std::map<std::pair<std::string, Condition>, ConditionResult> by_category;
  std::map<std::tuple<std::string, int, Condition>, ConditionResult> by_pair;
  std::map<Condition, ConditionResult> overall;

  nlohmann::json to_json() const;
};

ScoreReport score(const std::vector<StudyResponse>& responses,
                  const std::vector<StudyQuestion>& questions);

struct Verdict {
  bool raw_inequality = false;  // with_ref accuracy > baseline accuracy
  double p_value = 1.0;         // one-sided Fisher exact test
  bool significant = false;     // p_value < alpha
  bool transfer_achieved = false;
};

// One-sided Fisher exact test of H1: p_with_ref > p_baseline, conditioned on
// the total number of correct responses.
double fisher_exact_greater(std::size_t correct_a, std::size_t n_a, std::size_t correct_b,
                            std::size_t n_b);

Verdict compare_conditions(const ConditionResult& with_ref, const ConditionResult& baseline,
                           double alpha = 0.05);

// Markdown table: one row per (category, pair) with w/o-ref and w/-ref
// accuracies, raw comparison and p-value.
std::string report_markdown(const ScoreReport& report, double alpha = 0.05);
nlohmann::json report_json(const ScoreReport& report, double alpha = 0.05);

// Writes questions.json plus the images each question needs under `dir`.
void export_question_bundle(const std::vector<StudyQuestion>& questions,
                            const std::filesystem::path& store_root,
                            const std::filesystem::path& dir);
std::vector<StudyQuestion> load_questions(const std::filesystem::path& questions_json);

// Deterministic per-participant presentation: a seeded shuffle of all
// questions, truncated to `sample_size` when non-zero.
std::vector<std::string> presentation_order(const std::vector<StudyQuestion>& questions,
                                            const std::string& participant_id,
                                            std::size_t sample_size = 0);

}  // namespace vcb
