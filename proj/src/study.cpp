// SPDX-License-Identifier: Apache-2.0

#include "vcb/study.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>

#include "vcb/digest.hpp"
#include "vcb/error.hpp"
#include "vcb/files.hpp"
#include "vcb/pipeline.hpp"

namespace vcb {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string_view to_string(Condition c) {
  return c == Condition::kWithReference ? "with_reference" : "baseline";
}

Condition parse_condition(std::string_view text) {
  if (text == "with_reference") return Condition::kWithReference;
  if (text == "baseline") return Condition::kBaseline;
  fail(ErrorKind::kParameter, "unknown condition '" + std::string(text) + "'");
}

std::optional<CategoryParams> reference_category_params(std::string_view category) {
  if (category == "artwork") return CategoryParams{0.4, 0.7};
  if (category == "car") return CategoryParams{0.2, 0.2};
  if (category == "interior") return CategoryParams{0.5, 0.7};
  return std::nullopt;
}

json StudyQuestion::to_json() const {
  json pairs = json::array();
  for (const auto& p : ref_pairs) {
    pairs.push_back({{"label", p.label}, {"a_sha256", p.a_sha256}, {"b_sha256", p.b_sha256}});
  }
  return {{"question_id", question_id},
          {"category", category},
          {"source_sha256", source_sha256},
          {"run_id", run_id},
          {"generated_image", generated_image},
          {"ref_pairs", std::move(pairs)},
          {"correct_index", correct_index ? json(*correct_index) : json(nullptr)},
          {"condition", std::string(to_string(condition))},
          {"complete", complete},
          {"error", error}};
}

StudyQuestion StudyQuestion::from_json(const json& j) {
  StudyQuestion q;
  q.question_id = j.at("question_id").get<std::string>();
  q.category = j.at("category").get<std::string>();
  q.source_sha256 = j.at("source_sha256").get<std::string>();
  q.run_id = j.value("run_id", "");
  q.generated_image = j.value("generated_image", "");
  for (const auto& p : j.at("ref_pairs")) {
    q.ref_pairs.push_back({p.at("label").get<std::string>(), p.at("a_sha256").get<std::string>(),
                           p.at("b_sha256").get<std::string>()});
  }
  if (q.ref_pairs.size() != kPairsPerQuestion) {
    fail(ErrorKind::kFormat, "question " + q.question_id + " must have exactly four pairs");
  }
  if (!j.at("correct_index").is_null()) q.correct_index = j.at("correct_index").get<int>();
  q.condition = parse_condition(j.at("condition").get<std::string>());
  q.complete = j.value("complete", true);
  q.error = j.value("error", "");
  if (q.condition == Condition::kWithReference &&
      (!q.correct_index || *q.correct_index < 0 ||
       *q.correct_index >= static_cast<int>(kPairsPerQuestion))) {
    fail(ErrorKind::kFormat, "question " + q.question_id + " needs correct_index in 0..3");
  }
  return q;
}

std::vector<StudyQuestion> build_question_set(const std::vector<CategorySpec>& categories,
                                              Pipeline& pipeline,
                                              const BuildOptions& options) {
  std::vector<StudyQuestion> out;
  for (const auto& category : categories) {
    if (category.sources.empty()) {
      fail(ErrorKind::kParameter, "category '" + category.name + "' has no source images");
    }
    if (category.pairs.size() != kPairsPerQuestion) {
      fail(ErrorKind::kParameter, "category '" + category.name +
                                      "' must have exactly four reference pairs");
    }
    std::vector<PairDigests> pairs;
    for (std::size_t k = 0; k < kPairsPerQuestion; ++k) {
      const auto& p = category.pairs[k];
      pairs.push_back({p.label.empty() ? kPairLabels[k] : p.label, p.a.sha256(), p.b.sha256()});
    }

    auto run = [&](StudyQuestion& q, const BlendRequest& request) {
      try {
        const RunRecord record = pipeline.run_blend(request);
        q.run_id = record.run_id;
        q.generated_image = "runs/" + record.run_id + "/" + record.output_image;
      } catch (const std::exception& ex) {
        q.complete = false;
        q.error = ex.what();
      }
    };

    for (std::size_t s = 0; s < category.sources.size(); ++s) {
      GenSettings settings = options.settings;
      settings.seed = options.base_seed + s;
      for (std::size_t k = 0; k < kPairsPerQuestion; ++k) {
        StudyQuestion q;
        q.question_id = category.name + "-s" + std::to_string(s) + "-p" + std::to_string(k);
        q.category = category.name;
        q.source_sha256 = category.sources[s].sha256();
        q.ref_pairs = pairs;
        q.correct_index = static_cast<int>(k);
        q.condition = Condition::kWithReference;
        run(q, BlendRequest{category.sources[s], category.pairs[k].a, category.pairs[k].b,
                            BlendMode::kCommon, category.theta, category.d, settings});
        out.push_back(std::move(q));
      }
    }
    for (std::size_t s = 0; s < category.sources.size(); ++s) {
      GenSettings settings = options.settings;
      settings.seed = options.base_seed + s;
      StudyQuestion q;
      q.question_id = category.name + "-s" + std::to_string(s) + "-baseline";
      q.category = category.name;
      q.source_sha256 = category.sources[s].sha256();
      q.ref_pairs = pairs;
      q.condition = Condition::kBaseline;
      run(q, BlendRequest::baseline(category.sources[s], settings, category.d));
      out.push_back(std::move(q));
    }
  }
  return out;
}

std::string anonymize_participant(const std::string& raw_id, const std::string& salt) {
  return sha256_hex(salt + ":" + raw_id).substr(0, 16);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  fields.push_back(std::move(field));
  for (auto& f : fields) {
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
  }
  return fields;
}

}  // namespace

std::vector<StudyResponse> parse_responses_csv(const std::string& text, const std::string& salt) {
  std::istringstream in(text);
  std::string line;
  std::vector<StudyResponse> out;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (!header_seen) {
      if (fields.size() < 3 || fields[0] != "participant_id" || fields[1] != "question_id" ||
          fields[2] != "chosen_index") {
        fail(ErrorKind::kFormat,
             "response CSV header must be participant_id,question_id,chosen_index");
      }
      header_seen = true;
      continue;
    }
    if (fields.size() < 3) {
      fail(ErrorKind::kFormat, "line " + std::to_string(line_no) + ": expected 3 columns");
    }
    StudyResponse r;
    r.participant_id = salt.empty() ? fields[0] : anonymize_participant(fields[0], salt);
    r.question_id = fields[1];
    try {
      std::size_t used = 0;
      r.chosen_index = std::stoi(fields[2], &used);
      if (used != fields[2].size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      fail(ErrorKind::kFormat, "line " + std::to_string(line_no) + ": chosen_index '" +
                                   fields[2] + "' is not an integer");
    }
    r.response_id = "r" + std::to_string(out.size());
    out.push_back(std::move(r));
  }
  if (!header_seen) fail(ErrorKind::kFormat, "response CSV is empty");
  return out;
}

double ConditionResult::accuracy() const {
  if (n_responses == 0) fail(ErrorKind::kParameter, "no responses");
  return static_cast<double>(n_correct) / static_cast<double>(n_responses);
}

ScoreReport score(const std::vector<StudyResponse>& responses,
                  const std::vector<StudyQuestion>& questions) {
  if (responses.empty()) fail(ErrorKind::kParameter, "no responses");
  std::map<std::string, const StudyQuestion*> by_id;
  for (const auto& q : questions) by_id[q.question_id] = &q;

  std::vector<std::string> orphans;
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& r : responses) {
    const auto it = by_id.find(r.question_id);
    if (it == by_id.end() || !it->second->complete) {
      orphans.push_back(r.response_id.empty() ? r.question_id
                                              : r.response_id + " (" + r.question_id + ")");
      continue;
    }
    if (r.chosen_index < 0 || r.chosen_index >= static_cast<int>(kPairsPerQuestion)) {
      fail(ErrorKind::kParameter, "response " + r.response_id + ": chosen_index " +
                                      std::to_string(r.chosen_index) + " out of range 0..3");
    }
    if (!seen.emplace(r.participant_id, r.question_id).second) {
      fail(ErrorKind::kParameter, "participant " + r.participant_id +
                                      " answered question " + r.question_id + " twice");
    }
  }
  if (!orphans.empty()) {
    std::string ids;
    for (const auto& id : orphans) ids += (ids.empty() ? "" : ", ") + id;
    fail(ErrorKind::kParameter, "responses reference unknown or incomplete questions: " + ids);
  }

  ScoreReport report;
  auto add = [](ConditionResult& result, Condition c, bool correct) {
    result.condition = c;
    ++result.n_responses;
    if (correct) ++result.n_correct;
  };
  for (const auto& r : responses) {
    const StudyQuestion& q = *by_id.at(r.question_id);
    if (q.condition == Condition::kWithReference) {
      const bool correct = r.chosen_index == *q.correct_index;
      add(report.by_category[{q.category, q.condition}], q.condition, correct);
      add(report.by_pair[{q.category, *q.correct_index, q.condition}], q.condition, correct);
      add(report.overall[q.condition], q.condition, correct);
    } else {
      for (int k = 0; k < static_cast<int>(kPairsPerQuestion); ++k) {
        const bool correct = r.chosen_index == k;
        add(report.by_category[{q.category, q.condition}], q.condition, correct);
        add(report.by_pair[{q.category, k, q.condition}], q.condition, correct);
        add(report.overall[q.condition], q.condition, correct);
      }
    }
  }
  return report;
}

double fisher_exact_greater(std::size_t correct_a, std::size_t n_a, std::size_t correct_b,
                            std::size_t n_b) {
  if (correct_a > n_a || correct_b > n_b) {
    fail(ErrorKind::kParameter, "correct count exceeds number of responses");
  }
  const double n = static_cast<double>(n_a + n_b);
  const double k = static_cast<double>(correct_a + correct_b);
  const double draws = static_cast<double>(n_a);
  auto log_choose = [](double total, double pick) {
    return std::lgamma(total + 1) - std::lgamma(pick + 1) - std::lgamma(total - pick + 1);
  };
  const double log_denominator = log_choose(n, draws);
  const std::size_t hi = std::min(correct_a + correct_b, n_a);
  double p = 0.0;
  for (std::size_t x = correct_a; x <= hi; ++x) {
    const double xd = static_cast<double>(x);
    if (draws - xd > n - k) continue;
    p += std::exp(log_choose(k, xd) + log_choose(n - k, draws - xd) - log_denominator);
  }
  return std::clamp(p, 0.0, 1.0);
}

Verdict compare_conditions(const ConditionResult& with_ref, const ConditionResult& baseline,
                           double alpha) {
  if (with_ref.n_responses == 0 || baseline.n_responses == 0) {
    fail(ErrorKind::kParameter, "both conditions need at least one response");
  }
  if (!(alpha > 0.0 && alpha < 1.0)) fail(ErrorKind::kParameter, "alpha must lie in (0, 1)");
  Verdict v;
  // Cross-multiplied so the comparison is exact.
  v.raw_inequality = with_ref.n_correct * baseline.n_responses >
                     baseline.n_correct * with_ref.n_responses;
  v.p_value = fisher_exact_greater(with_ref.n_correct, with_ref.n_responses,
                                   baseline.n_correct, baseline.n_responses);
  v.significant = v.p_value < alpha;
  v.transfer_achieved = v.raw_inequality && v.significant;
  return v;
}

namespace {

json result_json(const ConditionResult& r) {
  return {{"n", r.n_responses}, {"correct", r.n_correct}, {"accuracy", r.accuracy()}};
}

json verdict_json(const Verdict& v) {
  return {{"raw_inequality", v.raw_inequality},
          {"p_value", v.p_value},
          {"significant", v.significant},
          {"transfer_achieved", v.transfer_achieved}};
}

std::set<std::string> categories_of(const ScoreReport& report) {
  std::set<std::string> out;
  for (const auto& [key, _] : report.by_category) out.insert(key.first);
  return out;
}

}  // namespace

json ScoreReport::to_json() const { return report_json(*this); }

json report_json(const ScoreReport& report, double alpha) {
  json categories = json::array();
  for (const auto& category : categories_of(report)) {
    json entry = {{"category", category}};
    const auto w = report.by_category.find({category, Condition::kWithReference});
    const auto b = report.by_category.find({category, Condition::kBaseline});
    if (w != report.by_category.end()) entry["with_reference"] = result_json(w->second);
    if (b != report.by_category.end()) entry["baseline"] = result_json(b->second);
    if (w != report.by_category.end() && b != report.by_category.end()) {
      entry["verdict"] = verdict_json(compare_conditions(w->second, b->second, alpha));
    }
    json pairs = json::array();
    for (int k = 0; k < static_cast<int>(kPairsPerQuestion); ++k) {
      json p = {{"index", k}, {"label", kPairLabels[k]}};
      const auto pw = report.by_pair.find({category, k, Condition::kWithReference});
      const auto pb = report.by_pair.find({category, k, Condition::kBaseline});
      if (pw != report.by_pair.end()) p["with_reference"] = result_json(pw->second);
      if (pb != report.by_pair.end()) p["baseline"] = result_json(pb->second);
      if (pw != report.by_pair.end() && pb != report.by_pair.end()) {
        p["verdict"] = verdict_json(compare_conditions(pw->second, pb->second, alpha));
      }
      pairs.push_back(std::move(p));
    }
    entry["pairs"] = std::move(pairs);
    categories.push_back(std::move(entry));
  }
  return {{"alpha", alpha}, {"categories", std::move(categories)}};
}

std::string report_markdown(const ScoreReport& report, double alpha) {
  std::ostringstream out;
  out << std::fixed;
  out << "| category | pair | w/o ref | w/ ref | w/ ref > w/o ref | p (one-sided) |\n";
  out << "|---|---|---|---|---|---|\n";
  auto cell = [](const std::map<std::tuple<std::string, int, Condition>, ConditionResult>& m,
                 const std::tuple<std::string, int, Condition>& key) -> const ConditionResult* {
    const auto it = m.find(key);
    return it == m.end() ? nullptr : &it->second;
  };
  for (const auto& category : categories_of(report)) {
    for (int k = 0; k < static_cast<int>(kPairsPerQuestion); ++k) {
      const auto* w = cell(report.by_pair, {category, k, Condition::kWithReference});
      const auto* b = cell(report.by_pair, {category, k, Condition::kBaseline});
      out << "| " << category << " | (" << kPairLabels[k] << ") | ";
      if (b) out << std::setprecision(2) << b->accuracy() << " (" << b->n_correct << "/" << b->n_responses << ")";
      else out << "-";
      out << " | ";
      if (w) out << std::setprecision(2) << w->accuracy() << " (" << w->n_correct << "/" << w->n_responses << ")";
      else out << "-";
      out << " | ";
      if (w && b) {
        const Verdict v = compare_conditions(*w, *b, alpha);
        out << (v.raw_inequality ? "yes" : "no") << " | " << std::setprecision(4) << v.p_value;
      } else {
        out << "- | -";
      }
      out << " |\n";
    }
  }
  return out.str();
}

void export_question_bundle(const std::vector<StudyQuestion>& questions, const fs::path& store_root,
                            const fs::path& dir) {
  RunStore store(store_root);
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "generated");
  auto copy_image = [&](const std::string& sha) -> std::string {
    const auto image = store.get_image(sha);
    if (!image) fail(ErrorKind::kNotFound, "image " + sha + " missing from store");
    const std::string rel = "images/" + sha + image->file_extension();
    if (!fs::exists(dir / rel)) write_file_atomic(dir / rel, image->bytes());
    return rel;
  };
  json items = json::array();
  for (const auto& q : questions) {
    json item = q.to_json();
    json files = {{"source", copy_image(q.source_sha256)}};
    json pairs = json::array();
    for (const auto& p : q.ref_pairs) {
      pairs.push_back({{"label", p.label}, {"a", copy_image(p.a_sha256)}, {"b", copy_image(p.b_sha256)}});
    }
    files["pairs"] = std::move(pairs);
    if (q.complete && !q.generated_image.empty()) {
      const std::string rel = "generated/" + q.question_id + ".png";
      write_file_atomic(dir / rel, read_file(store_root / q.generated_image));
      files["generated"] = rel;
    } else {
      files["generated"] = nullptr;
    }
    item["files"] = std::move(files);
    items.push_back(std::move(item));
  }
  write_file_atomic(dir / "questions.json",
                    json{{"version", 1}, {"questions", std::move(items)}}.dump(2));
}

std::vector<StudyQuestion> load_questions(const fs::path& questions_json) {
  const json j = json::parse(read_text_file(questions_json));
  const json& items = j.is_array() ? j : j.at("questions");
  std::vector<StudyQuestion> out;
  for (const auto& item : items) out.push_back(StudyQuestion::from_json(item));
  return out;
}

std::vector<std::string> presentation_order(const std::vector<StudyQuestion>& questions,
                                            const std::string& participant_id,
                                            std::size_t sample_size) {
  std::vector<std::string> ids;
  for (const auto& q : questions) {
    if (q.complete) ids.push_back(q.question_id);
  }
  const Sha256 h = sha256(participant_id);
  std::uint64_t seed = 0;
  for (int i = 0; i < 8; ++i) seed = (seed << 8) | h[i];
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  if (sample_size != 0 && sample_size < ids.size()) ids.resize(sample_size);
  return ids;
}

}  // namespace vcb
