#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "nucseg/error.hpp"
#include "nucseg/metrics.hpp"
#include "oracles.hpp"

using namespace nucseg;

namespace {

bool rel_close(double a, double b, double tol = 1e-12) {
  return std::abs(a - b) <= tol * std::max(1.0, std::max(std::abs(a), std::abs(b)));
}

// Applies a random permutation to the ids of a valid map.
InstanceMap relabel(const InstanceMap& m, std::uint64_t seed) {
  const std::uint16_t n = m.max_id();
  std::vector<std::uint16_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::uint16_t{1});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  InstanceMap out = m;
  for (auto& v : out.ids)
    if (v) v = perm[v - 1];
  if (m.classes) {
    out.classes.emplace();
    for (auto [id, c] : *m.classes) (*out.classes)[perm[id - 1]] = c;
  }
  return out;
}

// Removes instance `id` and renumbers the rest densely.
InstanceMap delete_instance(const InstanceMap& m, std::uint16_t id) {
  InstanceMap out = m;
  for (auto& v : out.ids) {
    if (v == id) v = 0;
    else if (v > id) --v;
  }
  if (m.classes) {
    out.classes.emplace();
    for (auto [k, c] : *m.classes)
      if (k != id) (*out.classes)[k > id ? k - 1 : k] = c;
  }
  return out;
}

LabeledPoint lp(double x, double y, int cls = 1) { return {{x, y}, cls, {}}; }

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("contingency table") {
    const InstanceMap gt = oracle::map_from_art({"11..", "11.2", "...2"});
    const InstanceMap pred = oracle::map_from_art({".1..", "11.2", "..22"});
    const Contingency t = build_contingency(pred, gt);
    CHECK(t.pred_area == std::vector<std::uint64_t>{6, 3, 3});
    CHECK(t.gt_area == std::vector<std::uint64_t>{6, 4, 2});
    REQUIRE(t.overlaps.size() == 2);
    CHECK(t.overlaps[0].pred == 1);
    CHECK(t.overlaps[0].count == 3);
    CHECK(t.overlaps[1].count == 2);
    CHECK_THROWS_AS(build_contingency(pred, InstanceMap(3, 3)), InvalidArgument);
  }

  TEST_CASE("hand examples") {
    // gt 8 px, pred 8 px, overlap 6 -> IoU 0.6.
    const InstanceMap gt = oracle::map_from_art({"1111....", "1111...."});
    const InstanceMap pred = oracle::map_from_art({".1111...", ".1111..2"});
    InstanceMap pred_one = pred;
    for (auto& v : pred_one.ids)
      if (v == 2) v = 0;
    const auto m = match_instances(pred_one, gt);
    REQUIRE(m.size() == 1);
    CHECK(m[0].iou == doctest::Approx(0.6).epsilon(1e-15));

    const PQStats s = compute_pq(pred, gt);
    CHECK(s.tp == 1);
    CHECK(s.fp == 1);
    CHECK(s.fn == 0);
    CHECK(s.dq() == doctest::Approx(1.0 / 1.5));
    CHECK(s.sq() == doctest::Approx(0.6));
    CHECK(s.pq() == doctest::Approx(0.4));

    // 10 px each, overlap 6 -> 6/14.
    const InstanceMap g10 = oracle::map_from_art({"11111.....", "11111....."});
    const InstanceMap p10 = oracle::map_from_art({"..11111...", "..11111..."});
    CHECK(compute_aji(p10, g10) == doctest::Approx(6.0 / 14.0));
  }

  TEST_CASE("degenerate maps") {
    const InstanceMap gt = oracle::map_from_art({"11.", "..2"});
    const InstanceMap empty(3, 2);
    CHECK(compute_pq(gt, gt).pq() == 1.0);
    CHECK(compute_aji(gt, gt) == 1.0);
    CHECK(compute_pq(empty, gt).pq() == 0.0);
    CHECK(compute_pq(empty, gt).fn == 2);
    CHECK(compute_aji(empty, gt) == 0.0);
    CHECK(compute_pq(empty, empty).pq() == 1.0);
    CHECK(compute_aji(empty, empty) == 1.0);
    CHECK(match_instances(oracle::map_from_art({"..1", "22."}), gt).empty());
  }

  TEST_CASE("class-filtered PQ needs class tables") {
    InstanceMap gt = oracle::map_from_art({"11.", "..2"});
    CHECK_THROWS_AS(compute_pq(gt, gt, 1), InvalidArgument);
    gt.classes = std::map<std::uint16_t, int>{{1, 1}, {2, 2}};
    InstanceMap pred = gt;
    (*pred.classes)[2] = 1;
    const PQStats c1 = compute_pq(pred, gt, 1);
    CHECK(c1.tp == 1);
    CHECK(c1.fp == 1);
    const PQStats c2 = compute_pq(pred, gt, 2);
    CHECK(c2.fn == 1);
    CHECK(c2.pq() == 0.0);
  }

  TEST_CASE("contingency path equals the pixel-set oracle") {
    for (std::uint64_t seed = 0; seed < 60; ++seed) {
      const int w = 8 + static_cast<int>(seed % 40), h = 10 + static_cast<int>(seed * 7 % 50);
      const InstanceMap gt = oracle::random_rect_map(seed, w, h, 1 + static_cast<int>(seed % 12), 3);
      const InstanceMap pred = oracle::random_rect_map(seed + 1000, w, h, 1 + static_cast<int>(seed % 9), 3);
      for (const auto& [p, g] : {std::pair{pred, gt}, std::pair{gt, gt}, std::pair{gt, pred}}) {
        const auto naive = oracle::naive_matches(p, g);
        const auto fast = match_instances(p, g);
        REQUIRE(naive.size() == fast.size());
        for (std::size_t i = 0; i < fast.size(); ++i) {
          CHECK(fast[i].pred == naive[i].pred);
          CHECK(fast[i].gt == naive[i].gt);
          CHECK(rel_close(fast[i].iou, static_cast<double>(naive[i].inter) / static_cast<double>(naive[i].uni)));
        }
        const auto np = oracle::naive_pq(p, g);
        const PQStats s = compute_pq(p, g);
        CHECK(s.tp == np.tp);
        CHECK(s.fp == np.fp);
        CHECK(s.fn == np.fn);
        CHECK(rel_close(s.pq(), np.pq()));
        CHECK(rel_close(compute_aji(p, g), oracle::naive_aji(p, g)));
        for (int c = 1; c <= 3; ++c) CHECK(rel_close(compute_pq(p, g, c).pq(), oracle::naive_pq(p, g, c).pq()));
      }
    }
  }

  TEST_CASE("mPQ matches the naive per-class recomputation") {
    std::vector<std::pair<InstanceMap, InstanceMap>> pairs;
    std::vector<PQStats> acc(3);
    for (std::uint64_t seed = 0; seed < 12; ++seed) {
      pairs.emplace_back(oracle::random_rect_map(seed + 77, 40, 40, 10, 3), oracle::random_rect_map(seed, 40, 40, 10, 3));
      const MPQResult r = compute_mpq(pairs.back().first, pairs.back().second, 3);
      for (int c = 0; c < 3; ++c) acc[c].merge(r.class_stats[c]);
      CHECK(rel_close(r.mpq, oracle::naive_mpq({pairs.back()}, 3)));
    }
    CHECK(rel_close(mpq_from_stats(acc).mpq, oracle::naive_mpq(pairs, 3)));
  }

  TEST_CASE("mPQ conventions") {
    InstanceMap gt = oracle::map_from_art({"11.", "..2"});
    gt.classes = std::map<std::uint16_t, int>{{1, 1}, {2, 2}};
    InstanceMap pred = oracle::map_from_art({"11.", "..."});
    pred.classes = std::map<std::uint16_t, int>{{1, 1}};
    const MPQResult r = compute_mpq(pred, gt, 3);
    CHECK(r.mpq == doctest::Approx(0.5));
    CHECK(r.per_class.at(1) == 1.0);
    CHECK(r.per_class.at(2) == 0.0);
    CHECK_FALSE(r.per_class.at(3).has_value());

    // One class: mPQ equals bPQ.
    InstanceMap g1 = oracle::random_rect_map(3, 30, 30, 8, 1);
    InstanceMap p1 = oracle::random_rect_map(4, 30, 30, 8, 1);
    CHECK(rel_close(compute_mpq(p1, g1, 1).mpq, compute_pq(p1, g1).pq()));

    InstanceMap e(3, 3);
    e.classes.emplace();
    CHECK(compute_mpq(e, e, 2).mpq == 1.0);
  }

  TEST_CASE("relabeling does not change PQ or AJI") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const InstanceMap gt = oracle::random_rect_map(seed, 48, 40, 12);
      const InstanceMap pred = oracle::random_rect_map(seed + 50, 48, 40, 12);
      const double pq = compute_pq(pred, gt).pq(), aji = compute_aji(pred, gt);
      const InstanceMap rp = relabel(pred, seed), rg = relabel(gt, seed + 9);
      CHECK(rel_close(compute_pq(rp, rg).pq(), pq));
      // AJI tie-breaks depend on ids, so compare against the oracle instead.
      CHECK(rel_close(compute_aji(rp, rg), oracle::naive_aji(rp, rg)));
      CHECK(compute_aji(relabel(gt, seed), gt) == 1.0);
      CHECK(aji >= 0.0);
      CHECK(aji <= 1.0);
    }
  }

  TEST_CASE("deleting a matched prediction never raises PQ") {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      const InstanceMap gt = oracle::random_rect_map(seed, 40, 40, 10);
      // Same seed: the first rectangles coincide with gt, two extra are painted on top.
      const InstanceMap pred = oracle::random_rect_map(seed, 40, 40, 12);
      const double pq = compute_pq(pred, gt).pq(), aji = compute_aji(pred, gt);
      const Contingency t = build_contingency(pred, gt);
      for (const auto& m : match_instances(pred, gt)) {
        const InstanceMap damaged = delete_instance(pred, m.pred);
        CHECK(compute_pq(damaged, gt).pq() <= pq + 1e-15);
        // AJI only when the pair is isolated; see the counterexample below.
        const bool isolated = std::all_of(t.overlaps.begin(), t.overlaps.end(), [&](const Contingency::Cell& c) {
          return (c.pred == m.pred) == (c.gt == m.gt);
        });
        if (isolated) CHECK(compute_aji(damaged, gt) <= aji + 1e-15);
      }
      const AJIStats st = aji_stats(t);
      CHECK(st.intersection <= st.union_);
    }
  }

  TEST_CASE("AJI can rise when a matched prediction is deleted") {
    // Deleting 1 lets gt 1 pick 2, which otherwise sits unused in the denominator.
    const InstanceMap gt = oracle::map_from_art({"1111111111..........", "22222222222222222222"});
    const InstanceMap pred = oracle::map_from_art({"1111112222222222....", "33333333333333333333"});
    CHECK(compute_aji(pred, gt) == doctest::Approx(26.0 / 40.0));
    const InstanceMap damaged = delete_instance(pred, 1);
    CHECK(compute_aji(damaged, gt) == doctest::Approx(24.0 / 36.0));
    CHECK(compute_aji(damaged, gt) == oracle::naive_aji(damaged, gt));
    CHECK(compute_pq(damaged, gt).pq() < compute_pq(pred, gt).pq());
  }

  TEST_CASE("detection matching") {
    const GroundTruthPoints pts{lp(10, 10, 1), lp(40, 40, 2), lp(80, 10, 1)};
    const DetectionStats same = detection_f1(pts, pts, 12.0, 2);
    CHECK(same.detection.f1() == 1.0);
    for (const auto& c : same.per_class) CHECK(c.f1() == 1.0);

    const DetectionStats far = detection_f1({lp(0, 0)}, {lp(50, 50)}, 12.0, 1);
    CHECK(far.detection.fp == 1);
    CHECK(far.detection.fn == 1);
    CHECK(far.detection.f1() == 0.0);

    const DetectionStats two = detection_f1({lp(10, 10), lp(13, 10)}, {lp(12, 10)}, 12.0, 1);
    CHECK(two.detection.tp == 1);
    CHECK(two.detection.fp == 1);
    CHECK(two.pairs == std::vector<std::pair<std::size_t, std::size_t>>{{1, 0}});

    // Radius is inclusive.
    CHECK(detection_f1({lp(0, 0)}, {lp(12, 0)}, 12.0, 1).detection.tp == 1);

    // Cardinality first: greedy nearest would match p0-g1 and leave g0 alone.
    const DetectionStats card = detection_f1({lp(5, 0), lp(14, 0)}, {lp(0, 0), lp(9, 0)}, 6.0, 1);
    CHECK(card.detection.tp == 2);

    // Class mismatch: a detection TP, but a classification FP and FN.
    const DetectionStats cls = detection_f1({lp(0, 0, 2)}, {lp(1, 0, 1)}, 12.0, 2);
    CHECK(cls.detection.tp == 1);
    CHECK(cls.per_class[0].fn == 1);
    CHECK(cls.per_class[1].fp == 1);
    CHECK(cls.per_class[0].tp + cls.per_class[1].tp == 0);

    CHECK(detection_f1({}, {}, 12.0, 1).detection.f1() == 1.0);
    CHECK_THROWS_AS(detection_f1({}, {}, 0.0, 1), InvalidArgument);
  }

  TEST_CASE("detection is optimal on random point sets") {
    std::mt19937_64 rng(21);
    for (int t = 0; t < 40; ++t) {
      GroundTruthPoints p, g;
      const int np = static_cast<int>(uniform_int(rng, 0, 6)), ng = static_cast<int>(uniform_int(rng, 0, 6));
      for (int i = 0; i < np; ++i) p.push_back(lp(uniform01(rng) * 40, uniform01(rng) * 40));
      for (int i = 0; i < ng; ++i) g.push_back(lp(uniform01(rng) * 40, uniform01(rng) * 40));
      const double radius = 10.0;
      // Brute force: the largest matching, then smallest total distance.
      Matrix w(static_cast<std::size_t>(np), static_cast<std::size_t>(ng));
      for (int i = 0; i < np; ++i)
        for (int j = 0; j < ng; ++j) {
          const double d = distance(p[i].pos, g[j].pos);
          w(i, j) = d <= radius ? 1000.0 - d : 0.0;
        }
      std::size_t best_card = 0;
      double best_dist = 0.0;
      if (np > 0 && ng > 0) {
        const auto bf = oracle::brute_force_matching(w);
        for (const auto& [a, b] : bf.pairs)
          if (w(a, b) > 0.0) {
            ++best_card;
            best_dist += distance(p[a].pos, g[b].pos);
          }
      }
      const DetectionStats s = detection_f1(p, g, radius, 1);
      CHECK(s.detection.tp == best_card);
      double dist = 0.0;
      for (const auto& [a, b] : s.pairs) dist += distance(p[a].pos, g[b].pos);
      CHECK(dist == doctest::Approx(best_dist).epsilon(1e-9));
    }
  }

  TEST_CASE("aggregation") {
    std::vector<ImageAccumulator> imgs;
    for (std::uint64_t seed = 0; seed < 8; ++seed)
      imgs.push_back(evaluate_image(oracle::random_rect_map(seed + 40, 40, 40, 9, 3),
                                    oracle::random_rect_map(seed, 40, 40, 9, 3), 3, 12.0));
    const EvalReport all = aggregate_reports(imgs, 3, 12.0);

    const EvalReport one = aggregate_reports({imgs[0]}, 3, 12.0);
    CHECK(one.bpq == imgs[0].binary.pq());
    CHECK(one.aji == imgs[0].aji.value());

    const EvalReport twice = aggregate_reports({imgs[0], imgs[0]}, 3, 12.0);
    CHECK(rel_close(twice.bpq, one.bpq));
    CHECK(rel_close(twice.aji, one.aji));
    CHECK(rel_close(twice.mpq.mpq, one.mpq.mpq));
    CHECK(rel_close(twice.detection.f1(), one.detection.f1()));

    std::mt19937_64 rng(2);
    for (int t = 0; t < 10; ++t) {
      auto shuffled = imgs;
      std::shuffle(shuffled.begin(), shuffled.end(), rng);
      const EvalReport r = aggregate_reports(shuffled, 3, 12.0);
      CHECK(r.bpq == all.bpq);
      CHECK(r.aji == all.aji);
      CHECK(r.mpq.mpq == all.mpq.mpq);
      CHECK(r.detection.f1() == all.detection.f1());
    }
    CHECK_THROWS_AS(aggregate_reports(imgs, 2, 12.0), InvalidArgument);
  }

  TEST_CASE("evaluate_image requires class tables for multi-class runs") {
    const InstanceMap m = oracle::map_from_art({"11.", "..2"});
    CHECK_THROWS_AS(evaluate_image(m, m, 3, 12.0), DataError);
    const ImageAccumulator a = evaluate_image(m, m, 1, 12.0);
    CHECK(a.binary.pq() == 1.0);
    CHECK(a.detection.f1() == 1.0);
  }
}
