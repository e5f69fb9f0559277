#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "autojudge/metrics.hpp"
#include "autojudge/text.hpp"
#include "oracle.hpp"
#include "synth.hpp"

using namespace autojudge;
using namespace autojudge::metrics;

namespace {

std::map<std::string, int> judged_map(const Qrels& q, const std::string& qid) {
  std::map<std::string, int> m;
  if (const auto* t = q.topic(qid))
    for (const auto& [d, g] : *t) m[d] = g;
  return m;
}

std::vector<std::string> docs(std::initializer_list<const char*> l) {
  return {l.begin(), l.end()};
}

}  // namespace

TEST(Ndcg, Examples) {
  Qrels q;
  q.add("q", "d1", 2);
  EXPECT_DOUBLE_EQ(ndcg_at_k(docs({"d1"}), q, "q", 10), 1.0);
  EXPECT_EQ(ndcg_at_k(docs({"x", "y"}), q, "q", 10), 0.0);

  Qrels r;
  r.add("q", "d1", 1);
  r.add("q", "d2", 2);
  const double dcg = 1.0 + 3.0 / std::log2(3.0);
  const double idcg = 3.0 + 1.0 / std::log2(3.0);
  EXPECT_NEAR(ndcg_at_k(docs({"d1", "d2", "d3"}), r, "q", 3), dcg / idcg, 1e-12);
  EXPECT_NEAR(dcg / idcg, 0.7967, 1e-4);
  EXPECT_THROW(ndcg_at_k(docs({"d1"}), r, "q", 0), std::invalid_argument);
}

TEST(AveragePrecision, Examples) {
  Qrels q;
  q.add("q", "a", 1);
  q.add("q", "b", 2);
  q.add("q", "c", 0);
  EXPECT_DOUBLE_EQ(average_precision(docs({"b", "a", "c"}), q, "q"), 1.0);
  EXPECT_EQ(average_precision(docs({"c", "x"}), q, "q"), 0.0);
  Qrels r;
  r.add("q", "d1", 1);
  r.add("q", "d2", 0);
  r.add("q", "d3", 2);
  EXPECT_NEAR(average_precision(docs({"d1", "d2", "d3"}), r, "q"), 0.5 * (1.0 + 2.0 / 3.0), 1e-12);
  // binarize_at = 2 keeps only d3: found at rank 3.
  EXPECT_NEAR(average_precision(docs({"d1", "d2", "d3"}), r, "q", 2), 1.0 / 3.0, 1e-12);
  Qrels none;
  none.add("q", "d1", 0);
  EXPECT_EQ(average_precision(docs({"d1"}), none, "q"), 0.0);
}

TEST(Metrics, RandomInstancesMatchOracle) {
  std::mt19937_64 rng(101);
  for (int trial = 0; trial < 300; ++trial) {
    auto q = synth::random_qrels(rng, 3, 20, 0.6);
    for (int t = 0; t < 3; ++t) {
      const auto qid = synth::id("q", t);
      std::vector<std::string> ranking;
      for (int d = 0; d < 20; ++d) ranking.push_back(synth::id("d", t * 1000 + d, 5));
      std::shuffle(ranking.begin(), ranking.end(), rng);
      ranking.resize(rng() % 21);
      const auto judged = judged_map(q, qid);
      for (int k : {1, 3, 5, 10, 20}) {
        const double v = ndcg_at_k(ranking, q, qid, k);
        EXPECT_NEAR(v, oracle::ndcg(ranking, judged, k), 1e-9);
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
      for (int b : {1, 2}) {
        const double v = average_precision(ranking, q, qid, b);
        EXPECT_NEAR(v, oracle::ap(ranking, judged, b), 1e-9);
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
    }
  }
}

TEST(Metrics, SwapTowardIdealNeverDecreasesNdcg) {
  std::mt19937_64 rng(103);
  for (int trial = 0; trial < 300; ++trial) {
    auto q = synth::random_qrels(rng, 1, 15, 0.8);
    std::vector<std::string> ranking;
    for (int d = 0; d < 15; ++d) ranking.push_back(synth::id("d", d, 5));
    std::shuffle(ranking.begin(), ranking.end(), rng);
    const auto qid = synth::id("q", 0);
    for (std::size_t i = 0; i + 1 < ranking.size(); ++i) {
      const int upper = q.grade(qid, ranking[i]).value_or(0);
      const int lower = q.grade(qid, ranking[i + 1]).value_or(0);
      if (upper >= lower) continue;
      auto swapped = ranking;
      std::swap(swapped[i], swapped[i + 1]);
      EXPECT_GE(ndcg_at_k(swapped, q, qid, 10), ndcg_at_k(ranking, q, qid, 10) - 1e-15);
    }
  }
}

TEST(Metrics, BinaryNdcgIsOneIffTopPositionsRelevant) {
  std::mt19937_64 rng(107);
  for (int trial = 0; trial < 300; ++trial) {
    Qrels q;
    std::vector<std::string> ranking;
    int R = 0;
    for (int d = 0; d < 12; ++d) {
      const int g = static_cast<int>(rng() % 2);
      q.add("q", synth::id("d", d), g);
      R += g;
      ranking.push_back(synth::id("d", d));
    }
    std::shuffle(ranking.begin(), ranking.end(), rng);
    const int k = 1 + static_cast<int>(rng() % 12);
    bool top_relevant = true;
    for (int i = 0; i < std::min(k, R); ++i) top_relevant = top_relevant && *q.grade("q", ranking[i]) == 1;
    const double v = ndcg_at_k(ranking, q, "q", k);
    if (R == 0) EXPECT_EQ(v, 0.0);
    else EXPECT_EQ(v == 1.0, top_relevant) << v;
  }
}

TEST(EvaluateRun, PerfectAndEmptyRuns) {
  Qrels q;
  q.add("q1", "a", 2);
  q.add("q1", "b", 1);
  q.add("q1", "c", 0);
  q.add("q2", "x", 1);
  autojudge::Run perfect = parse_run("q1 Q0 a 1 3 p\nq1 Q0 b 2 2 p\nq1 Q0 c 3 1 p\nq2 Q0 x 1 1 p\n");
  auto ev = evaluate_run(perfect, q);
  EXPECT_DOUBLE_EQ(ev.mean.at("ndcg@10"), 1.0);
  EXPECT_DOUBLE_EQ(ev.mean.at("map"), 1.0);

  autojudge::Run empty;
  empty.tag = "empty";
  auto e = evaluate_run(empty, q);
  EXPECT_EQ(e.mean.at("ndcg@10"), 0.0);
  EXPECT_EQ(e.mean.at("map"), 0.0);
}

TEST(EvaluateRun, TopicsWithoutRelevantDocsAndUnknownTopics) {
  Qrels q;
  q.add("q1", "a", 1);
  q.add("q2", "b", 0);
  autojudge::Run r = parse_run("q1 Q0 a 1 1 r\nq2 Q0 b 1 1 r\nq9 Q0 z 1 1 r\n");
  Warnings w;
  auto ev = evaluate_run(r, q, {}, &w);
  // NDCG averages over both qrels topics (q2 contributes 0); MAP only over q1.
  EXPECT_DOUBLE_EQ(ev.mean.at("ndcg@10"), 0.5);
  EXPECT_DOUBLE_EQ(ev.mean.at("map"), 1.0);
  ASSERT_EQ(w.size(), 1u);
  EXPECT_NE(w[0].find("q9"), std::string::npos);
}

TEST(EvaluateRun, IndependentOfScoresAndTags) {
  std::mt19937_64 rng(109);
  auto q = synth::random_qrels(rng, 4, 20, 0.7);
  auto run = synth::random_run(rng, "orig", 4, 20, 15);
  auto other = run;
  other.tag = "renamed";
  for (auto& e : other.entries) {
    e.tag = "renamed";
    e.score = 1000.0 - e.rank * 3.5;
  }
  auto a = evaluate_run(run, q), b = evaluate_run(other, q);
  EXPECT_EQ(a.mean, b.mean);
}

TEST(EvaluateRun, SixteenRunFixtureMatchesOracle) {
  const std::string dir = AUTOJUDGE_FIXTURES;
  auto q = parse_qrels(text::read_file(dir + "/qrels16.txt"));
  int evaluated = 0;
  for (int i = 1; i <= 16; ++i) {
    auto run = parse_run(text::read_file(dir + "/runs16/" + synth::id("run", i, 2) + ".txt"));
    auto ev = evaluate_run(run, q);
    ++evaluated;
    double ndcg_sum = 0, ap_sum = 0;
    int ap_n = 0;
    for (const auto& [qid, judged] : q.judgments()) {
      // Oracle ranking: sort by (score desc, docid asc) written out longhand.
      std::vector<std::pair<double, std::string>> rows;
      for (const auto& e : run.entries)
        if (e.qid == qid) rows.emplace_back(-e.score, e.docid);
      std::sort(rows.begin(), rows.end());
      std::vector<std::string> ranking;
      for (const auto& r : rows) ranking.push_back(r.second);
      auto jm = judged_map(q, qid);
      ndcg_sum += oracle::ndcg(ranking, jm, 10);
      bool any = false;
      for (const auto& [d, g] : jm) any = any || g >= 1;
      if (any) ap_sum += oracle::ap(ranking, jm, 1), ++ap_n;
    }
    EXPECT_NEAR(ev.mean.at("ndcg@10"), ndcg_sum / q.judgments().size(), 1e-9);
    EXPECT_NEAR(ev.mean.at("map"), ap_sum / ap_n, 1e-9);
  }
  EXPECT_EQ(evaluated, 16);
}

TEST(EvaluationsCsv, Layout) {
  Qrels q;
  q.add("q1", "a", 2);
  q.add("q2", "b", 0);
  autojudge::Run r = parse_run("q1 Q0 a 1 1 sys\n");
  std::vector<RunEvaluation> evs{evaluate_run(r, q)};
  EXPECT_EQ(write_evaluations_csv(evs),
            "run_tag,qid,metric,value\n"
            "sys,q1,map,1.000000\n"
            "sys,q1,ndcg@10,1.000000\n"
            "sys,q2,ndcg@10,0.000000\n"
            "sys,all,map,1.000000\n"
            "sys,all,ndcg@10,0.500000\n");
}
