#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "aefuse/errors.hpp"
#include "aefuse/fusion.hpp"
#include "aefuse/image.hpp"
#include "aefuse/metrics.hpp"
#include "aefuse/niqe.hpp"

namespace aefuse {

/// Raw (un-normalized) quality of one fused image against its sources.
/// `combined` is left at zero; it only has meaning relative to a pool.
inline QualityScores score_fused(const ImagePair& pair, const ImageGray& fused, const NiqeModel* niqe) {
  if (!fused.same_shape(pair.a)) throw DimensionError("fused image does not match pair dimensions");
  QualityScores s;
  s.en = entropy(fused);
  s.ag = avg_gradient(fused);
  s.brenner = brenner(fused);
  s.ssim_a = ssim(pair.a, fused);
  s.ssim_b = ssim(pair.b, fused);
  s.psnr_a = psnr(pair.a, fused);
  s.psnr_b = psnr(pair.b, fused);
  s.mi_a = mutual_information(pair.a, fused);
  s.mi_b = mutual_information(pair.b, fused);
  s.viff = 0.5 * (viff(pair.a, fused) + viff(pair.b, fused));
  s.niqe = niqe ? niqe_score(fused, *niqe) : 0.0;
  return s;
}

inline std::vector<FusionCandidate> evaluate_candidates(const ImagePair& pair,
                                                        std::vector<FusionCandidate> candidates,
                                                        const NiqeModel* niqe = nullptr,
                                                        const MetricWeights& weights = {}) {
  if (candidates.empty()) throw EmptyInputError("evaluate_candidates: no candidates");
  std::vector<QualityScores> raw;
  raw.reserve(candidates.size());
  for (auto& c : candidates) raw.push_back(score_fused(pair, c.fused, niqe));
  const std::vector<double> combined = combined_score(raw, weights);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    raw[i].combined = combined[i];
    candidates[i].scores = raw[i];
  }
  return candidates;
}

/// Highest combined score; exact ties go to the lexicographically smallest id.
inline const FusionCandidate& select_optimal(const std::vector<FusionCandidate>& scored) {
  if (scored.empty()) throw EmptyInputError("select_optimal: no candidates");
  const FusionCandidate* best = nullptr;
  for (const auto& c : scored) {
    if (!c.scores) throw NotEvaluatedError("select_optimal: candidate '" + c.algo_id + "' has no scores");
    if (!best || c.scores->combined > best->scores->combined ||
        (c.scores->combined == best->scores->combined && c.algo_id < best->algo_id))
      best = &c;
  }
  return *best;
}

// ---------------------------------------------------------------------------
// Solution bank

inline constexpr double kSameImageTolerance = 1.0 / 510.0;

inline bool same_image(const ImageGray& a, const ImageGray& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::abs(a.pixels()[i] - b.pixels()[i]) > kSameImageTolerance) return false;
  return true;
}

struct SolutionBank {
  std::map<std::string, FusionCandidate> entries;  // pair_id -> current optimum
  std::size_t generation = 0;
  MetricWeights weights;

  const FusionCandidate* find(const std::string& pair_id) const {
    const auto it = entries.find(pair_id);
    return it == entries.end() ? nullptr : &it->second;
  }
  // One call per completed update round over a dataset.
  void advance_generation() { ++generation; }
};

enum class UpdateOutcome { inserted, replaced, kept, identical };

struct ContestResult {
  double incumbent = 0, challenger = 0;
  bool challenger_wins() const { return challenger > incumbent; }
};

/// Two-candidate re-normalization used for every bank update.
inline ContestResult contest(const QualityScores& incumbent, const QualityScores& challenger,
                             const MetricWeights& weights) {
  const std::vector<QualityScores> pool{incumbent, challenger};
  const auto c = combined_score(pool, weights);
  return {c[0], c[1]};
}

inline UpdateOutcome offer(SolutionBank& bank, const std::string& pair_id, FusionCandidate candidate,
                           const ImagePair& pair, const NiqeModel* niqe = nullptr) {
  if (!candidate.fused.same_shape(pair.a)) throw DimensionError("candidate does not match pair dimensions");
  auto it = bank.entries.find(pair_id);
  if (it == bank.entries.end()) {
    if (!candidate.scores) {
      QualityScores s = score_fused(pair, candidate.fused, niqe);
      s.combined = 0.5;
      candidate.scores = s;
    }
    bank.entries.emplace(pair_id, std::move(candidate));
    return UpdateOutcome::inserted;
  }
  FusionCandidate& incumbent = it->second;
  if (same_image(incumbent.fused, candidate.fused)) return UpdateOutcome::identical;
  if (!incumbent.scores) throw NotEvaluatedError("bank entry '" + pair_id + "' has no scores");
  QualityScores challenger = candidate.scores ? *candidate.scores : score_fused(pair, candidate.fused, niqe);
  const ContestResult r = contest(*incumbent.scores, challenger, bank.weights);
  if (!r.challenger_wins()) return UpdateOutcome::kept;
  challenger.combined = r.challenger;
  candidate.scores = challenger;
  incumbent = std::move(candidate);
  return UpdateOutcome::replaced;
}

inline SolutionBank update_bank(SolutionBank bank, const std::string& pair_id, FusionCandidate candidate,
                                const ImagePair& pair, const NiqeModel* niqe = nullptr) {
  offer(bank, pair_id, std::move(candidate), pair, niqe);
  return bank;
}

/// Bank seeded from the classical fusers: run, score, select per pair.
inline SolutionBank initial_bank(const std::vector<ImagePair>& dataset, const NiqeModel* niqe = nullptr,
                                 const std::vector<std::string>& algos = bank_algorithms(),
                                 const MetricWeights& weights = {}) {
  SolutionBank bank;
  bank.weights = weights;
  for (const auto& pair : dataset) {
    if (bank.entries.count(pair.pair_id)) throw ParseError("duplicate pair_id '" + pair.pair_id + "'");
    const auto scored = evaluate_candidates(pair, run_bank(pair, algos), niqe, weights);
    bank.entries.emplace(pair.pair_id, select_optimal(scored));
  }
  return bank;
}

// ---------------------------------------------------------------------------
// Persistence: one PGM per pair plus a tab-separated manifest sorted by pair_id.

inline constexpr const char* kManifestName = "bank.manifest";

namespace bank_detail {

inline std::string file_stem(const std::string& pair_id) {
  std::string s;
  for (char c : pair_id) s.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.' ? c : '_');
  return s;
}

}  // namespace bank_detail

inline std::string format_manifest(const SolutionBank& bank) {
  std::ostringstream out;
  out << "# generation " << bank.generation << "\n";
  std::size_t index = 0;
  for (const auto& [id, cand] : bank.entries) {
    char score[64];
    std::snprintf(score, sizeof score, "%.6f", cand.scores ? cand.scores->combined : 0.0);
    out << id << '\t' << cand.algo_id << '\t' << score << '\t' << index++ << '_'
        << bank_detail::file_stem(id) << ".pgm\n";
  }
  return out.str();
}

inline void save_bank(const SolutionBank& bank, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::size_t index = 0;
  for (const auto& [id, cand] : bank.entries)
    save_pgm(cand.fused, dir / (std::to_string(index++) + "_" + bank_detail::file_stem(id) + ".pgm"));
  const fs::path tmp = dir / (std::string(kManifestName) + ".tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out << format_manifest(bank);
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, dir / kManifestName);
}

struct ManifestRecord {
  std::string pair_id, algo_id;
  double combined = 0;
  std::string path;
};

inline std::vector<ManifestRecord> parse_manifest(const std::string& text, std::size_t* generation = nullptr) {
  std::vector<ManifestRecord> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (generation && line.rfind("# generation ", 0) == 0) *generation = std::stoull(line.substr(13));
      continue;
    }
    std::vector<std::string> f;
    std::size_t start = 0;
    for (std::size_t p; (p = line.find('\t', start)) != std::string::npos; start = p + 1)
      f.push_back(line.substr(start, p - start));
    f.push_back(line.substr(start));
    if (f.size() != 4) throw ParseError("manifest line needs 4 tab-separated fields: " + line);
    out.push_back({f[0], f[1], std::stod(f[2]), f[3]});
  }
  return out;
}

/// Reload a saved bank. Raw metrics are recomputed against `dataset` so that
/// later contests have full scores; the stored combined value is kept.
inline SolutionBank load_bank(const std::filesystem::path& dir, const std::vector<ImagePair>& dataset,
                              const NiqeModel* niqe = nullptr, const MetricWeights& weights = {}) {
  SolutionBank bank;
  bank.weights = weights;
  const auto records = parse_manifest(detail::read_file(dir / kManifestName), &bank.generation);
  for (const auto& r : records) {
    const auto pair = std::find_if(dataset.begin(), dataset.end(),
                                   [&](const ImagePair& p) { return p.pair_id == r.pair_id; });
    if (pair == dataset.end()) throw BankMissError("no pair for bank entry '" + r.pair_id + "'");
    FusionCandidate c{r.algo_id, load_pgm(dir / r.path), std::nullopt};
    QualityScores s = score_fused(*pair, c.fused, niqe);
    s.combined = r.combined;
    c.scores = s;
    bank.entries.emplace(r.pair_id, std::move(c));
  }
  return bank;
}

}  // namespace aefuse
