// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only when
// all pass. Tolerances are fixed here.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "evseq/harness.hpp"
#include "evseq/metrics.hpp"
#include "evseq/pipeline.hpp"
#include "evseq/sequence.hpp"
#include "evseq/toyrun.hpp"
#include "fixtures.hpp"
#include "gen.hpp"
#include "oracles.hpp"
#include "stubs.hpp"

using namespace evseq;

namespace {

struct Failed {
  std::string why;
};

void require(bool ok, const std::string& why) {
  if (!ok) throw Failed{why};
}

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// ---------------------------------------------------------------------------
// 1. tokenizer fixture and rounding round trip

std::string criterion_tokenizer() {
  const auto t0 = Clock::now();
  const std::string want = "<0><0><1><0><.><2><sep><0><1><2><5><.><4><sync>";
  const std::vector<double> fixture = {10.23, 125.37};
  const TokenSeq got = encode_time_list(fixture);
  require(got.size() == 14 && got.render() == want, "fixture renders " + got.render());

  std::mt19937_64 rng(101);
  std::size_t checked = 0;
  while (checked < 10000) {
    const std::size_t n = 1 + rng() % 4;
    std::vector<double> v;
    std::vector<long long> tenths;
    for (std::size_t i = 0; i < n && checked < 10000; ++i, ++checked) {
      const long long k = static_cast<long long>(rng() % 9999950ULL);  // milli, rounds to <= 9999.9
      v.push_back(static_cast<double>(k) / 1000.0);
      tenths.push_back(oracle::tenths_from_milli(k));
    }
    const auto back = decode_time_list(encode_time_list(v));
    require(back.size() == v.size(), "length changed");
    for (std::size_t i = 0; i < v.size(); ++i) {
      const std::string text = oracle::fixed_from_tenths(tenths[i], 4);
      require(back[i] == std::stod(text), "value " + std::to_string(v[i]) + " decoded to " + std::to_string(back[i]) +
                                              ", want " + text);
    }
  }
  const double sec = since(t0);
  require(sec < 1.0, "took " + std::to_string(sec) + " s");
  char buf[96];
  std::snprintf(buf, sizeof buf, "14-token fixture exact, %zu values round trip, %.3f s", checked, sec);
  return buf;
}

// ---------------------------------------------------------------------------
// 2. sequence round trip with layout invariants

void check_layout(const SequenceLayout& l, std::size_t events) {
  std::vector<int> cover(l.size(), 0);
  for (const auto& s : l.spans) {
    require(s.begin <= s.end, "inverted span");
    for (std::size_t p = s.begin; p < s.end; ++p) ++cover[p];
  }
  for (std::size_t p = 0; p < l.size(); ++p) {
    require(cover[p] == (l.loss_mask[p] ? 1 : 0), "answer position " + std::to_string(p) + " not covered exactly once");
    require((l.loss_mask[p] != 0) == (p >= l.prompt_length), "loss mask disagrees with prompt length");
  }
  const auto ev = factorized_logprob_spans(l);
  require(ev.size() == events, "event span count");
  for (std::size_t k = 0; k < ev.size(); ++k) {
    require(ev[k].time.end <= ev[k].score.begin && ev[k].score.end <= ev[k].text.begin, "span order in event");
    if (k > 0) require(ev[k - 1].text.end <= ev[k].time.begin, "event order");
    for (std::size_t p = ev[k].time.begin; p < ev[k].time.end; ++p) require(l.tokens.tags[p] == TokenTag::time, "tag");
    for (std::size_t p = ev[k].score.begin; p < ev[k].score.end; ++p) require(l.tokens.tags[p] == TokenTag::score, "tag");
    for (std::size_t p = ev[k].text.begin; p < ev[k].text.end; ++p) require(l.tokens.tags[p] == TokenTag::text, "tag");
  }
  for (std::size_t p = 0; p + 1 < l.size(); ++p) {
    const Head want = l.loss_mask[p + 1] ? head_for(l.tokens.tags[p + 1]) : Head::none;
    require(l.head_assign[p] == want, "head assignment at " + std::to_string(p));
  }
}

std::string criterion_sequence() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(202);
  for (int n = 0; n < 1000; ++n) {
    const TaskKind task = gen::kAllTasks[n % 5];
    VideoSample s = gen::sample(rng, task, 1 + rng() % 6);
    // Unrounded input on a millisecond grid; the expected response is
    // rounded with the integer oracle.
    Response raw, want;
    const std::size_t k = 1 + rng() % 5;
    const PresentMask mask = mask_for(task);
    const auto max_milli = static_cast<unsigned long long>(s.duration * 1000.0);
    for (std::size_t i = 0; i < k; ++i) {
      Event e, r;
      e.present = r.present = mask;
      if (mask.time) {
        long long a = static_cast<long long>(rng() % (max_milli + 1));
        long long b = static_cast<long long>(rng() % (max_milli + 1));
        if (a > b) std::swap(a, b);
        e.start = static_cast<double>(a) / 1000.0;
        e.end = static_cast<double>(b) / 1000.0;
        r.start = std::min(static_cast<double>(oracle::tenths_from_milli(a)) / 10.0, s.duration);
        r.end = std::min(static_cast<double>(oracle::tenths_from_milli(b)) / 10.0, s.duration);
      }
      if (mask.score) {
        const long long m = static_cast<long long>(rng() % 9901);
        e.score = static_cast<double>(m) / 1000.0;
        r.score = static_cast<double>(oracle::tenths_from_milli(m)) / 10.0;
      }
      if (mask.text) e.caption = r.caption = gen::caption(rng);
      raw.events.push_back(e);
      want.events.push_back(r);
    }
    if (mask.time) {
      std::vector<std::size_t> idx(k);
      for (std::size_t i = 0; i < k; ++i) idx[i] = i;
      std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) {
        return raw.events[a].start < raw.events[b].start ||
               (raw.events[a].start == raw.events[b].start && raw.events[a].end < raw.events[b].end);
      });
      Response rs, ws;
      for (auto i : idx) {
        rs.events.push_back(raw.events[i]);
        ws.events.push_back(want.events[i]);
      }
      raw = rs;
      want = ws;
    }
    BuildOptions b;
    b.end_sentinel = n % 2 == 1;
    const SequenceLayout l = build_sequence(s, raw, b);
    check_layout(l, k);
    const auto parsed = parse_sequence(l.tokens.slice(l.prompt_length, l.size()), ParseMode::strict);
    require(parsed.response == want, "instance " + std::to_string(n) + " (" + std::string(to_string(task)) +
                                         ") differs after round trip");
  }
  const double sec = since(t0);
  require(sec < 10.0, "took " + std::to_string(sec) + " s");
  char buf[96];
  std::snprintf(buf, sizeof buf, "1000 instances over 5 tasks, invariants hold, %.2f s", sec);
  return buf;
}

// ---------------------------------------------------------------------------
// 3. constrained generation from random logits

std::string constrained_generations(std::size_t n, double* seconds) {
  const auto t0 = Clock::now();
  std::mt19937_64 seeds(303);
  std::ostringstream transcript;
  for (std::size_t i = 0; i < n; ++i) {
    RandomScorer m(seeds());
    GenerateOptions g;
    g.constrained = true;
    g.max_tokens = 16 + seeds() % 240;
    g.max_events = 1 + seeds() % 10;
    std::ostringstream trace;
    g.trace = &trace;
    const auto r = generate(m, SequenceLayout{}, g);
    const std::string tag = "generation " + std::to_string(i);
    require(r.raw.size() <= g.max_tokens, tag + " exceeded its budget");
    require(r.finished, tag + " did not terminate");
    require(is_head_cycle_prefix(r.raw), tag + " head trace is not a (time,score,text)* prefix");
    require(r.head_trace.size() == r.raw.size(), tag + " trace length");
    for (std::size_t p = 0; p < r.raw.size(); ++p) require(head_for(r.raw.tags[p]) == r.head_trace[p], tag + " head");
    try {
      const auto parsed = parse_sequence(r.raw, ParseMode::strict);
      require(parsed.response == r.response, tag + " response differs from strict parse");
    } catch (const ParseError& e) {
      throw Failed{tag + " fails strict parse: " + e.what()};
    }
    transcript << r.raw.render() << '\n' << trace.str();
  }
  if (seconds) *seconds = since(t0);
  return transcript.str();
}

std::string last_fsm_transcript;

std::string criterion_fsm() {
  double sec = 0;
  last_fsm_transcript = constrained_generations(1000, &sec);
  require(sec < 10.0, "took " + std::to_string(sec) + " s");
  char buf[120];
  std::snprintf(buf, sizeof buf, "1000 generations parse strictly, head cycle holds, all within budget, %.2f s", sec);
  return buf;
}

// ---------------------------------------------------------------------------
// 4. factorized NLL consistency

struct Batch {
  std::vector<VideoSample> samples;
  std::vector<nn::Example> examples;
};

Batch random_batch(std::mt19937_64& rng, const nn::ToyNetConfig& c, std::size_t n, std::size_t max_frames) {
  Batch b;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    VideoSample s = gen::sample(rng, gen::kAllTasks[rng() % 5], 1 + rng() % max_frames);
    s.features = FrameFeatures(s.frame_times.size(), c.patches, c.feature_dim);
    for (auto& v : s.features.values) v = normal(rng);
    s.gold = gen::response(rng, s.task, s.duration, 3);
    for (auto& e : s.gold.events) {
      if (e.present.text) e.caption = e.caption.substr(0, 8);
    }
    b.samples.push_back(std::move(s));
  }
  b.examples = make_examples(b.samples, training_build_options(c.slots_per_frame));
  return b;
}

std::string criterion_nll() {
  const auto t0 = Clock::now();
  nn::ToyNetConfig c;
  std::mt19937_64 rng(404);
  double worst = 0;
  std::size_t answers = 0;
  for (int n = 0; n < 100; ++n) {
    const auto p = nn::init_params<double>(c, 400 + static_cast<std::uint64_t>(n));
    const Batch b = random_batch(rng, c, 1 + rng() % 4, 4);
    const auto rep = nn::loss(p, std::span<const nn::Example>(b.examples));
    for (std::size_t i = 0; i < b.examples.size(); ++i) {
      const auto& ex = b.examples[i];
      // Whole-answer NLL by teacher forcing through the incremental scorer.
      nn::ToyNetScorer<double> scorer(p, *ex.sample);
      scorer.begin(build_prompt(*ex.sample, training_build_options(c.slots_per_frame)));
      double whole = 0;
      for (std::size_t q = ex.layout.prompt_length; q < ex.layout.size(); ++q) {
        const TokenTag tag = ex.layout.tokens.tags[q];
        const int id = ex.layout.tokens.ids[q];
        whole -= scorer.next_scores(head_for(tag))[static_cast<std::size_t>(id)];
        if (q + 1 < ex.layout.size()) scorer.accept(tag, id);
      }
      const auto& en = rep.examples[i];
      double spans = en.end;
      for (const auto& e : en.events) spans += e[0] + e[1] + e[2];
      require(en.events.size() == ex.sample->gold.events.size(), "event span count");
      worst = std::max({worst, std::fabs(whole - spans) / whole, std::fabs(en.total - spans) / en.total});
      ++answers;
    }
  }
  require(worst < 1e-6, "max relative error " + std::to_string(worst));
  char buf[120];
  std::snprintf(buf, sizeof buf, "100 batches (%zu answers), max relative error %.2e, %.2f s", answers, worst, since(t0));
  return buf;
}

// ---------------------------------------------------------------------------
// 5. gradient check

std::string criterion_gradcheck() {
  const auto t0 = Clock::now();
  nn::ToyNetConfig c;
  c.d_model = 32;
  c.layers = 2;
  const auto p = nn::init_params<double>(c, 505);
  std::mt19937_64 rng(505);
  const Batch b = random_batch(rng, c, 3, 2);
  const auto rep = nn::grad_check(p, std::span<const nn::Example>(b.examples), 1e-5, 200, 506);
  std::string worst_group;
  double worst = 0;
  std::size_t min_checked = SIZE_MAX;
  require(rep.groups.size() == 8, "expected 8 parameter groups");
  for (const auto& g : rep.groups) {
    require(g.checked >= 200, g.group + " checked only " + std::to_string(g.checked));
    require(g.max_rel_error < 1e-4, g.group + " relative error " + std::to_string(g.max_rel_error) + " at " + g.worst);
    min_checked = std::min(min_checked, g.checked);
    if (g.max_rel_error >= worst) {
      worst = g.max_rel_error;
      worst_group = g.group;
    }
  }
  const double sec = since(t0);
  require(sec < 120.0, "took " + std::to_string(sec) + " s");
  char buf[160];
  std::snprintf(buf, sizeof buf, "8 groups x >= %zu entries, max relative error %.2e (%s), %.1f s", min_checked, worst,
                worst_group.c_str(), sec);
  return buf;
}

// ---------------------------------------------------------------------------
// 6. learning demonstration

struct LearnOutput {
  std::string checkpoint;
  std::string predictions;
  std::string history;
  std::vector<double> epochs;
};

LearnOutput learn_once(EvalReport* report, double* seconds) {
  const ToyRunConfig c = toy_preset("default");
  const ToyData data = make_toy_data(c);
  const ToyRunResult r = run_toy(c, data);
  LearnOutput out;
  std::ostringstream ck;
  std::map<std::string, std::string> meta;
  for (const auto& [k, v] : config_values(c)) meta["config." + k] = v;
  nn::save_checkpoint(ck, r.params, meta);
  out.checkpoint = ck.str();
  for (std::size_t i = 0; i < r.test_predictions.size(); ++i) {
    AnnotationRecord rec;
    rec.video_id = data.test.samples[i].video_id;
    rec.duration = data.test.samples[i].duration;
    rec.task = data.test.samples[i].task;
    rec.instruction = data.test.samples[i].instruction;
    rec.events = r.test_predictions[i];
    out.predictions += serialize_record(rec) + '\n';
  }
  char buf[64];
  for (const auto& e : r.history.epochs) {
    std::snprintf(buf, sizeof buf, "%zu %.17g\n", e.epoch, e.mean_loss);
    out.history += buf;
    out.epochs.push_back(e.mean_loss);
  }
  if (report) *report = r.test_report;
  if (seconds) *seconds = r.seconds;
  return out;
}

LearnOutput last_learn;

std::string criterion_learning() {
  const ToyRunConfig c = toy_preset("default");
  require(c.data.frames == 64 && c.data.min_events == 1 && c.data.max_events == 3, "dataset shape");
  require(c.train_samples == 1000 && c.test_samples == 200, "split sizes");

  // Harness sanity: echoing the gold answers scores 100.
  const ToyData data = make_toy_data(c);
  std::vector<Response> echo;
  for (const auto& s : data.test.samples) echo.push_back(s.gold);
  const EvalReport gold = score_responses(data.test.samples, echo, data.test.config.task);
  require(gold.values.at("R1@0.5") == 100.0 && gold.values.at("F1") == 100.0, "gold echo does not score 100");

  EvalReport rep;
  double sec = 0;
  last_learn = learn_once(&rep, &sec);
  const double r1 = rep.values.at("R1@0.5"), f1 = rep.values.at("F1");
  // Smoothed loss curve: 5-epoch moving average.
  const std::vector<double>& loss = last_learn.epochs;
  constexpr std::size_t w = 5;
  std::size_t rises = 0;
  for (std::size_t i = w; i < loss.size(); ++i)
    if (loss[i] > loss[i - w] + 1e-12) ++rises;  // window sums differ by loss[i] - loss[i-w]
  char buf[240];
  std::snprintf(buf, sizeof buf,
                "R1@0.5 %.1f (>= 80), F1 %.1f (>= 60), R1@0.7 %.1f, echo 100.0, smoothed loss rises %zu, %.0f s",
                r1, f1, rep.values.at("R1@0.7"), rises, sec);
  require(r1 >= 80.0 && f1 >= 60.0, buf);
  require(rises == 0, buf);
  require(sec < 1800.0, std::string(buf) + ", over 30 min");
  return buf;
}

// ---------------------------------------------------------------------------
// 7. metric oracles

std::vector<Interval> to_intervals(const std::vector<oracle::Iv>& v) {
  std::vector<Interval> out;
  for (const auto& x : v) out.push_back({x.s, x.e});
  return out;
}

std::vector<oracle::Iv> random_ivs(std::mt19937_64& rng, std::size_t max_n, bool allow_empty) {
  const std::size_t n = (allow_empty ? 0 : 1) + rng() % (max_n + (allow_empty ? 1 : 0));
  std::vector<oracle::Iv> v;
  for (std::size_t i = 0; i < n; ++i) {
    double a = static_cast<double>(rng() % 21), b = static_cast<double>(rng() % 21);
    if (a > b) std::swap(a, b);
    if (a == b) b += 1;
    v.push_back({a, b});
  }
  return v;
}

std::string criterion_metrics() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(707);
  for (int n = 0; n < 500; ++n) {
    const auto a = random_ivs(rng, 1, false)[0], b = random_ivs(rng, 1, false)[0];
    require(std::fabs(iou({a.s, a.e}, {b.s, b.e}) - oracle::exact_iou(a.s, a.e, b.s, b.e)) < 1e-12, "iou");
  }
  for (int n = 0; n < 500; ++n) {
    const std::size_t q = 1 + rng() % 8;
    std::vector<oracle::Iv> p, g;
    for (std::size_t i = 0; i < q; ++i) {
      p.push_back(random_ivs(rng, 1, false)[0]);
      g.push_back(random_ivs(rng, 1, false)[0]);
    }
    double s = 0;
    for (std::size_t i = 0; i < q; ++i) s += oracle::exact_iou(p[i].s, p[i].e, g[i].s, g[i].e);
    for (double t : {0.5, 0.7}) {
      std::size_t hits = 0;
      for (std::size_t i = 0; i < q; ++i) hits += oracle::exact_iou(p[i].s, p[i].e, g[i].s, g[i].e) >= t;
      require(recall_at_1(to_intervals(p), to_intervals(g), t) == 100.0 * static_cast<double>(hits) / static_cast<double>(q),
              "R@1 count");
    }
    require(std::fabs(mean_iou(to_intervals(p), to_intervals(g)) - 100.0 * s / static_cast<double>(q)) < 1e-9, "mIOU");
  }
  std::size_t worse = 0;
  double max_gap = 0;
  for (int n = 0; n < 500; ++n) {
    const auto p = random_ivs(rng, 8, true), g = random_ivs(rng, 8, true);
    double greedy = 0, optimal = 0;
    for (double t : kF1Thresholds) {
      const std::size_t m = greedy_matches(to_intervals(p), to_intervals(g), t);
      require(m == oracle::greedy_matches(p, g, t), "greedy match count");
      const std::size_t best = oracle::optimal_matches(p, g, t);
      require(m <= best, "greedy beats optimal");
      greedy += oracle::f1(m, p.size(), g.size());
      optimal += oracle::f1(best, p.size(), g.size());
    }
    greedy *= 100.0 / static_cast<double>(kF1Thresholds.size());
    optimal *= 100.0 / static_cast<double>(kF1Thresholds.size());
    require(std::fabs(event_f1(to_intervals(p), to_intervals(g)) - greedy) < 1e-9, "F1");
    if (optimal > greedy + 1e-12) ++worse;
    max_gap = std::max(max_gap, optimal - greedy);
  }
  for (int n = 0; n < 500; ++n) {
    const auto g = random_ivs(rng, 8, true), raw = random_ivs(rng, 8, true);
    std::vector<oracle::ScoredIv> p;
    std::vector<ScoredInterval> lib;
    for (const auto& x : raw) {
      const double s = static_cast<double>(rng() % 5);
      p.push_back({x, s});
      lib.push_back({{x.s, x.e}, s});
    }
    double want = 0;
    for (double t : kMapThresholds) want += oracle::average_precision(p, g, t);
    want /= static_cast<double>(kMapThresholds.size());
    require(std::fabs(interval_map(lib, to_intervals(g)) - want) < 1e-9, "mAP");
  }
  std::vector<std::vector<ScoredClip>> videos;
  std::size_t hits = 0;
  for (int n = 0; n < 500; ++n) {
    std::vector<ScoredClip> v;
    const std::size_t k = 1 + rng() % 8;
    for (std::size_t i = 0; i < k; ++i) {
      const double start = static_cast<double>(rng() % 50);
      v.push_back({{start, start + 2}, static_cast<double>(rng() % 4), static_cast<double>(rng() % 51) / 10.0});
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < k; ++i) {
      if (v[i].predicted_score > v[best].predicted_score ||
          (v[i].predicted_score == v[best].predicted_score && v[i].interval.start < v[best].interval.start)) {
        best = i;
      }
    }
    const int want = *v[best].gold_score >= 4.0 ? 1 : 0;
    require(hit_at_1_video(v) == want, "HIT@1 video");
    hits += static_cast<std::size_t>(want);
    videos.push_back(std::move(v));
  }
  require(std::fabs(hit_at_1(videos) - 100.0 * static_cast<double>(hits) / 500.0) < 1e-9, "HIT@1");
  char buf[200];
  std::snprintf(buf, sizeof buf,
                "iou, R@1, mIOU, F1, mAP, HIT@1 match oracles on 500 instances each; greedy F1 below optimal on %zu/500, "
                "max gap %.2f points, %.2f s",
                worse, max_gap, since(t0));
  return buf;
}

// ---------------------------------------------------------------------------
// 8. pipeline fixtures

std::string criterion_pipeline() {
  const auto t0 = Clock::now();
  require(filter_dvc(fixtures::compliant()).keep, "compliant record rejected");
  const std::pair<AnnotationRecord, FilterReason> cases[] = {
      {fixtures::short_caption(), FilterReason::word_count},
      {fixtures::similar_captions(), FilterReason::similar_captions},
      {fixtures::too_few_events(), FilterReason::event_count},
      {fixtures::special_character(), FilterReason::special_characters},
  };
  for (const auto& [rec, why] : cases) {
    const auto d = filter_dvc(rec);
    require(!d.keep && d.reasons.size() == 1 && d.reasons[0] == why, rec.video_id + " not rejected for its one reason");
  }

  std::vector<std::size_t> level;
  const auto sims = fixtures::similarity_ladder(&level);
  const auto scores = bin_scores(sims);
  const auto ladder = bin_score_values();
  std::set<std::size_t> levels_hit;
  for (std::size_t i = 0; i < sims.size(); ++i) {
    require(scores[i] == ladder[level[i]], "ladder level " + std::to_string(level[i]) + " binned to " +
                                               std::to_string(scores[i]));
    levels_hit.insert(level[i]);
  }
  require(levels_hit.size() == 21, "ladder does not cover 21 levels");

  std::mt19937_64 rng(808);
  for (int n = 0; n < 200; ++n) {
    AnnotationRecord h;
    h.task = TaskKind::vhd;
    h.video_id = "r" + std::to_string(n);
    const std::size_t events = 1 + rng() % 5;
    for (std::size_t k = 0; k < events; ++k) {
      const std::size_t clips = 1 + rng() % 6;
      for (std::size_t c = 0; c < clips; ++c) {
        Event e = fixtures::caption_event(static_cast<double>(h.events.size()), static_cast<double>(h.events.size()) + 1.0,
                                          "event " + std::to_string(k));
        e.present = mask_for(TaskKind::vhd);
        e.score = 1.0 + 0.2 * static_cast<double>(rng() % 5);
        h.events.events.push_back(e);
        h.sources.push_back(k);
      }
    }
    const auto vs = select_summary_clips(h);
    require(vs.events.size() == events, "one summary clip per event");
    for (std::size_t k = 0; k < events; ++k) {
      double best = -1;
      for (std::size_t i = 0; i < h.events.size(); ++i) {
        if (h.sources[i] == k) best = std::max(best, h.events.events[i].score);
      }
      std::size_t first = 0;
      while (h.sources[first] != k || h.events.events[first].score != best) ++first;
      require(vs.events.events[k].start == h.events.events[first].start && vs.sources[k] == k, "argmax clip");
    }
  }
  const double sec = since(t0);
  require(sec < 5.0, "took " + std::to_string(sec) + " s");
  char buf[160];
  std::snprintf(buf, sizeof buf, "4 single-reason rejects + 1 accept, ladder hits all 21 scores, 200 argmax records, %.2f s",
                sec);
  return buf;
}

// ---------------------------------------------------------------------------
// 9. determinism

std::string criterion_determinism() {
  require(!last_fsm_transcript.empty() && !last_learn.checkpoint.empty(), "criteria 3 and 6 must run first");
  const std::string fsm = constrained_generations(1000, nullptr);
  require(fsm == last_fsm_transcript, "constrained generations differ between runs");
  const LearnOutput again = learn_once(nullptr, nullptr);
  require(again.history == last_learn.history, "loss curves differ");
  require(again.checkpoint == last_learn.checkpoint, "checkpoints differ");
  require(again.predictions == last_learn.predictions, "test predictions differ");
  char buf[160];
  std::snprintf(buf, sizeof buf, "generation transcripts (%zu B), checkpoint (%zu B), predictions identical on repeat",
                fsm.size(), again.checkpoint.size());
  return buf;
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<std::string()>> criteria[] = {
      {"tokenizer fixture", criterion_tokenizer},   {"sequence round trip", criterion_sequence},
      {"constrained grammar", criterion_fsm},       {"factorized NLL", criterion_nll},
      {"gradient check", criterion_gradcheck},      {"learning demonstration", criterion_learning},
      {"metric oracles", criterion_metrics},        {"pipeline fixtures", criterion_pipeline},
      {"determinism", criterion_determinism},
  };
  int failed = 0;
  int index = 0;
  for (const auto& [name, run] : criteria) {
    ++index;
    std::string detail;
    bool ok = false;
    try {
      detail = run();
      ok = true;
    } catch (const Failed& f) {
      detail = f.why;
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    failed += !ok;
    std::printf("[%s] %d %s: %s\n", ok ? "PASS" : "FAIL", index, name, detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/9 criteria passed\n", 9 - failed);
  return failed == 0 ? 0 : 1;
}
