#include "tabcpt/contamination.hpp"

#include <algorithm>
#include <cctype>
#include <iomanip>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>
#include "tabcpt/digest.hpp"
#include "tabcpt/error.hpp"

namespace tabcpt {

namespace {

using nlohmann::json;

constexpr char kCellSeparator = '\x1f';

std::vector<std::uint64_t> sorted_unique(std::vector<std::uint64_t> values) {
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  return values;
}

Verdict hash_verdict(double score, const ContaminationThresholds& t) {
  if (score >= t.hash_exclude) return Verdict::exclude;
  if (score >= t.hash_review) return Verdict::review;
  return Verdict::pass;
}

json metadata_json(const DatasetManifest& m, const std::string& side, const std::string& status) {
  return {{"type", "dataset"},     {"side", side},        {"id", m.id},   {"name", m.name},
          {"source", m.source},    {"path", m.path.generic_string()}, {"rows", m.rows},
          {"cols", m.cols},        {"target_column", m.target_column}, {"status", status}};
}

}  // namespace

const char* to_string(Rule rule) {
  switch (rule) {
    case Rule::size: return "size";
    case Rule::identity: return "identity";
    case Rule::feature_names: return "feature_names";
    case Rule::row_hash: return "row_hash";
    case Rule::column_hash: return "column_hash";
  }
  return "?";
}

const char* to_string(Verdict verdict) {
  switch (verdict) {
    case Verdict::exclude: return "exclude";
    case Verdict::review: return "review";
    case Verdict::pass: return "pass";
  }
  return "?";
}

void ContaminationThresholds::validate() const {
  auto in_unit = [](double x) { return x >= 0.0 && x <= 1.0; };
  if (!in_unit(feature_jaccard_review) || !in_unit(hash_review) || !in_unit(hash_exclude)) {
    throw config_error("contamination thresholds must lie in [0, 1]");
  }
  if (hash_review > hash_exclude) throw config_error("hash review threshold exceeds the exclude threshold");
}

std::string normalize_name(std::string_view name) {
  std::string out;
  for (char c : name) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isalnum(u)) out.push_back(static_cast<char>(std::tolower(u)));
  }
  return out;
}

std::vector<std::string> name_tokens(std::string_view name) {
  std::vector<std::string> tokens;
  std::string current;
  for (char c : name) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isalnum(u)) {
      current.push_back(static_cast<char>(std::tolower(u)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

std::vector<std::uint64_t> hash_rows(const Table& table) {
  std::vector<std::uint64_t> hashes;
  hashes.reserve(table.n_rows());
  std::vector<std::string> cells(table.n_cols() + 1);
  for (std::size_t i = 0; i < table.n_rows(); ++i) {
    for (std::size_t j = 0; j < table.n_cols(); ++j) cells[j] = table.columns[j].canonical_cell(i);
    cells.back() = table.canonical_target(i);
    std::sort(cells.begin(), cells.end());
    Digest64 digest;
    for (const auto& cell : cells) {
      digest.update(cell);
      digest.update(std::string_view(&kCellSeparator, 1));
    }
    hashes.push_back(digest.value());
  }
  return sorted_unique(std::move(hashes));
}

std::vector<std::uint64_t> hash_columns(const Table& table) {
  std::vector<std::uint64_t> hashes;
  hashes.reserve(table.n_cols() + 1);
  for (const Column& column : table.columns) {
    Digest64 digest;
    for (std::size_t i = 0; i < column.size(); ++i) {
      digest.update(column.canonical_cell(i));
      digest.update(std::string_view(&kCellSeparator, 1));
    }
    hashes.push_back(digest.value());
  }
  Digest64 target;
  for (std::size_t i = 0; i < table.n_rows(); ++i) {
    target.update(table.canonical_target(i));
    target.update(std::string_view(&kCellSeparator, 1));
  }
  hashes.push_back(target.value());
  return sorted_unique(std::move(hashes));
}

double overlap_score(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b) {
  if (a.empty() || b.empty()) throw input_error("overlap score of an empty hash set");
  std::size_t common = 0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      ++common;
      ++ia;
      ++ib;
    }
  }
  return static_cast<double>(common) / static_cast<double>(std::min(a.size(), b.size()));
}

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
  if (a.empty() || b.empty()) throw input_error("Jaccard index of an empty feature-name set");
  std::size_t common = 0;
  for (const auto& x : a) common += b.count(x);
  return static_cast<double>(common) / static_cast<double>(a.size() + b.size() - common);
}

IndexEntry index_dataset(const DatasetManifest& manifest, const Table& table) {
  IndexEntry entry;
  entry.id = manifest.id;
  entry.display_name = manifest.name;
  entry.name = normalize_name(manifest.name);
  entry.source = manifest.source;
  entry.rows = table.n_rows();
  entry.cols = table.n_cols() + 1;
  for (const Column& column : table.columns) {
    auto normalized = normalize_name(column.name);
    if (!normalized.empty()) entry.feature_names.insert(std::move(normalized));
  }
  entry.row_hashes = hash_rows(table);
  entry.column_hashes = hash_columns(table);
  return entry;
}

Verdict size_filter(std::size_t rows, std::size_t min_rows) {
  return rows > min_rows ? Verdict::pass : Verdict::exclude;
}

Finding identity_cross_reference(const IndexEntry& train, const IndexEntry& eval) {
  Finding finding{train.id, eval.id, Rule::identity, 0.0, Verdict::pass};
  if (train.id == eval.id || (!train.name.empty() && train.name == eval.name)) {
    finding.score = 1.0;
    finding.verdict = Verdict::exclude;
    return finding;
  }
  if (train.rows == eval.rows && train.cols == eval.cols) {
    const auto a = name_tokens(train.display_name);
    const auto b = name_tokens(eval.display_name);
    const std::set<std::string> sa(a.begin(), a.end());
    const std::set<std::string> sb(b.begin(), b.end());
    bool shared_long_token = false;
    for (const auto& token : sa) {
      if (token.size() >= 4 && sb.count(token)) shared_long_token = true;
    }
    if (shared_long_token) {
      finding.score = jaccard(sa, sb);
      finding.verdict = Verdict::review;
    }
  }
  return finding;
}

Finding feature_name_overlap(const IndexEntry& train, const IndexEntry& eval, double review_threshold) {
  const double score = jaccard(train.feature_names, eval.feature_names);
  return {train.id, eval.id, Rule::feature_names, score, score >= review_threshold ? Verdict::review : Verdict::pass};
}

Finding hash_overlap(const IndexEntry& train, const IndexEntry& eval, Rule rule,
                     const ContaminationThresholds& thresholds) {
  const auto& a = rule == Rule::row_hash ? train.row_hashes : train.column_hashes;
  const auto& b = rule == Rule::row_hash ? eval.row_hashes : eval.column_hashes;
  const double score = overlap_score(a, b);
  return {train.id, eval.id, rule, score, hash_verdict(score, thresholds)};
}

std::vector<CorpusEntry> load_corpus(const std::vector<DatasetManifest>& manifests) {
  std::vector<CorpusEntry> corpus;
  corpus.reserve(manifests.size());
  for (const auto& manifest : manifests) {
    CorpusEntry entry{manifest, std::nullopt, {}};
    try {
      entry.table = load_csv(manifest);
    } catch (const Error& e) {
      entry.load_error = e.what();
    }
    corpus.push_back(std::move(entry));
  }
  return corpus;
}

ContaminationReport scan_corpus(std::span<const CorpusEntry> train, std::span<const CorpusEntry> eval,
                                const ContaminationThresholds& thresholds) {
  thresholds.validate();
  ContaminationReport report;
  report.thresholds = thresholds;

  std::vector<IndexEntry> eval_index;
  for (const auto& entry : eval) {
    report.eval_metadata.push_back(entry.manifest);
    if (!entry.table) {
      report.load_failures.push_back({entry.manifest.id, "eval", entry.load_error});
      continue;
    }
    eval_index.push_back(index_dataset(entry.manifest, *entry.table));
  }

  std::set<std::string> excluded;
  std::set<std::string> reviewed;
  std::set<std::string> passed;
  for (const auto& entry : train) {
    report.train_metadata.push_back(entry.manifest);
    if (!entry.table) {
      report.load_failures.push_back({entry.manifest.id, "train", entry.load_error});
      continue;
    }
    const IndexEntry index = index_dataset(entry.manifest, *entry.table);
    std::vector<Finding> findings;
    if (size_filter(index.rows, thresholds.min_rows) == Verdict::exclude) {
      findings.push_back({index.id, "", Rule::size, 1.0, Verdict::exclude});
    }
    for (const auto& other : eval_index) {
      findings.push_back(identity_cross_reference(index, other));
      if (!index.feature_names.empty() && !other.feature_names.empty()) {
        findings.push_back(feature_name_overlap(index, other, thresholds.feature_jaccard_review));
      }
      findings.push_back(hash_overlap(index, other, Rule::row_hash, thresholds));
      findings.push_back(hash_overlap(index, other, Rule::column_hash, thresholds));
    }
    bool any_exclude = false;
    bool any_review = false;
    for (auto& finding : findings) {
      if (finding.verdict == Verdict::pass) continue;
      any_exclude |= finding.verdict == Verdict::exclude;
      any_review |= finding.verdict == Verdict::review;
      report.findings.push_back(std::move(finding));
    }
    if (any_exclude) {
      excluded.insert(index.id);
    } else {
      if (any_review) reviewed.insert(index.id);
      passed.insert(index.id);
    }
  }

  std::stable_sort(report.findings.begin(), report.findings.end(), [](const Finding& a, const Finding& b) {
    return std::tie(a.verdict, a.rule, a.train_id, a.eval_id) < std::tie(b.verdict, b.rule, b.train_id, b.eval_id);
  });
  report.excluded_ids.assign(excluded.begin(), excluded.end());
  report.review_ids.assign(reviewed.begin(), reviewed.end());
  report.passed_ids.assign(passed.begin(), passed.end());
  return report;
}

std::string ContaminationReport::to_jsonl() const {
  std::ostringstream out;
  for (const auto& f : findings) {
    json line = {{"type", "finding"}, {"train_id", f.train_id}, {"eval_id", f.eval_id},
                 {"rule", to_string(f.rule)}, {"score", f.score}, {"verdict", to_string(f.verdict)}};
    out << line.dump() << '\n';
  }
  for (const auto& failure : load_failures) {
    json line = {{"type", "load_failure"}, {"side", failure.side}, {"id", failure.id}, {"message", failure.message}};
    out << line.dump() << '\n';
  }
  const std::set<std::string> excluded(excluded_ids.begin(), excluded_ids.end());
  const std::set<std::string> reviewed(review_ids.begin(), review_ids.end());
  std::set<std::string> failed;
  for (const auto& failure : load_failures) {
    if (failure.side == "train") failed.insert(failure.id);
  }
  for (const auto& m : train_metadata) {
    const char* status = failed.count(m.id)     ? "failed"
                         : excluded.count(m.id) ? "excluded"
                         : reviewed.count(m.id) ? "review"
                                                : "passed";
    out << metadata_json(m, "train", status).dump() << '\n';
  }
  for (const auto& m : eval_metadata) out << metadata_json(m, "eval", "eval").dump() << '\n';
  json summary = {{"type", "summary"},
                  {"train_datasets", train_metadata.size()},
                  {"eval_datasets", eval_metadata.size()},
                  {"findings", findings.size()},
                  {"excluded", excluded_ids.size()},
                  {"review", review_ids.size()},
                  {"passed", passed_ids.size()},
                  {"load_failures", load_failures.size()},
                  {"thresholds",
                   {{"min_rows", thresholds.min_rows},
                    {"feature_jaccard_review", thresholds.feature_jaccard_review},
                    {"hash_review", thresholds.hash_review},
                    {"hash_exclude", thresholds.hash_exclude}}}};
  out << summary.dump() << '\n';
  return out.str();
}

std::string ContaminationReport::summary_text() const {
  std::ostringstream out;
  out << "Contamination scan: " << train_metadata.size() << " training datasets against " << eval_metadata.size()
      << " evaluation datasets\n";
  out << "  passed   " << passed_ids.size() << " (of which " << review_ids.size() << " need review)\n";
  out << "  excluded " << excluded_ids.size() << '\n';
  out << "  failed   " << load_failures.size() << " load failure(s)\n";
  if (!findings.empty()) {
    out << "\nFindings (most severe first):\n";
    out << "  " << std::left << std::setw(8) << "verdict" << std::setw(14) << "rule" << std::setw(24) << "train"
        << std::setw(24) << "eval" << "score\n";
    for (const auto& f : findings) {
      out << "  " << std::left << std::setw(8) << to_string(f.verdict) << std::setw(14) << to_string(f.rule)
          << std::setw(24) << f.train_id << std::setw(24) << (f.eval_id.empty() ? "-" : f.eval_id) << std::fixed
          << std::setprecision(3) << f.score << '\n';
    }
  }
  for (const auto& failure : load_failures) {
    out << "  load failure (" << failure.side << ") " << failure.id << ": " << failure.message << '\n';
  }
  if (!review_ids.empty()) {
    out << "\nKept but flagged for manual metadata inspection:\n";
    for (const auto& id : review_ids) out << "  " << id << '\n';
  }
  return out.str();
}

}  // namespace tabcpt
