#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "evseq/sequence.hpp"
#include "gen.hpp"

using namespace evseq;

namespace {

Event make_event(double s, double e, const std::string& cap, PresentMask m = {true, false, true}, double score = 0) {
  Event ev;
  ev.start = s;
  ev.end = e;
  ev.caption = cap;
  ev.score = score;
  ev.present = m;
  return ev;
}

VideoSample two_frames() {
  VideoSample s;
  s.video_id = "x";
  s.duration = 10.0;
  s.frame_times = {0.0, 5.0};
  s.instruction = "go";
  s.task = TaskKind::mr;
  return s;
}

// Partition and ordering laws every built layout must satisfy.
void expect_layout_laws(const SequenceLayout& l, std::size_t events) {
  std::vector<int> cover(l.size(), 0);
  for (const auto& s : l.spans) {
    ASSERT_LE(s.begin, s.end);
    for (std::size_t p = s.begin; p < s.end; ++p) ++cover[p];
  }
  for (std::size_t p = 0; p < l.size(); ++p) {
    ASSERT_EQ(cover[p], l.loss_mask[p] ? 1 : 0) << "offset " << p;
    ASSERT_EQ(l.loss_mask[p] != 0, p >= l.prompt_length);
  }
  const auto ev = factorized_logprob_spans(l);
  ASSERT_EQ(ev.size(), events);
  for (std::size_t k = 0; k < ev.size(); ++k) {
    ASSERT_LT(ev[k].time.end - 1, ev[k].score.begin);
    ASSERT_LT(ev[k].score.begin, ev[k].text.begin);
    for (std::size_t p = ev[k].time.begin; p < ev[k].time.end; ++p) ASSERT_EQ(l.tokens.tags[p], TokenTag::time);
    for (std::size_t p = ev[k].score.begin; p < ev[k].score.end; ++p) ASSERT_EQ(l.tokens.tags[p], TokenTag::score);
    for (std::size_t p = ev[k].text.begin; p < ev[k].text.end; ++p) ASSERT_EQ(l.tokens.tags[p], TokenTag::text);
    if (k > 0) ASSERT_LE(ev[k - 1].text.end, ev[k].time.begin);
  }
  ASSERT_EQ(l.frame_count * l.frame_block_size(), l.frame_count * (l.slots_per_frame + 6));
  // head_assign at p names the head that emits token p + 1.
  for (std::size_t p = 0; p + 1 < l.size(); ++p) {
    if (l.loss_mask[p + 1]) {
      ASSERT_EQ(l.head_assign[p], head_for(l.tokens.tags[p + 1]));
    } else {
      ASSERT_EQ(l.head_assign[p], Head::none);
    }
  }
}

}  // namespace

TEST(SortEvents, Examples) {
  const auto sorted = sort_events({make_event(5, 7, "a"), make_event(1, 2, "b")});
  EXPECT_EQ(sorted[0].start, 1.0);
  EXPECT_EQ(sorted[1].start, 5.0);
  EXPECT_TRUE(sort_events({}).empty());
}

TEST(SortEvents, MatchesComparisonOracle) {
  std::mt19937_64 rng(1);
  std::vector<Event> ev;
  for (int i = 0; i < 100; ++i) {
    ev.push_back(make_event(static_cast<double>(rng() % 20), static_cast<double>(20 + rng() % 20), std::to_string(i)));
  }
  const auto got = sort_events(ev);
  // Insertion sort, stable by construction.
  std::vector<Event> want;
  for (const auto& e : ev) {
    auto it = want.end();
    while (it != want.begin()) {
      const auto& p = *(it - 1);
      if (p.start < e.start || (p.start == e.start && p.end <= e.end)) break;
      --it;
    }
    want.insert(it, e);
  }
  EXPECT_EQ(got, want);
}

TEST(ValidateResponse, Findings) {
  Response ok;
  ok.events = {make_event(0, 1, "a"), make_event(2, 3, "b"), make_event(4, 5, "c")};
  EXPECT_TRUE(validate_response(ok, 10).empty());

  Response inv;
  inv.events = {make_event(3, 1, "a")};
  auto f = validate_response(inv, 10);
  ASSERT_EQ(f.size(), 1u);
  EXPECT_EQ(f[0].kind, Finding::Kind::interval_inverted);
  EXPECT_EQ(f[0].message, "interval inverted");

  Response many;
  for (int i = 0; i < 51; ++i) many.events.push_back(make_event(0, 1, "a"));
  f = validate_response(many, 10);
  ASSERT_EQ(f.size(), 1u);
  EXPECT_EQ(f[0].kind, Finding::Kind::event_count);
  EXPECT_NE(f[0].message.find("event count out of range"), std::string::npos);

  Response unsorted;
  unsorted.events = {make_event(4, 5, "a"), make_event(0, 1, "b")};
  f = validate_response(unsorted, 10);
  ASSERT_EQ(f.size(), 1u);
  EXPECT_EQ(f[0].kind, Finding::Kind::order);

  Response late;
  late.events = {make_event(4, 11, "a")};
  EXPECT_EQ(validate_response(late, 10).at(0).kind, Finding::Kind::out_of_range);

  Response masked;
  masked.events = {make_event(1, 2, "a")};
  ValidateOptions vo;
  vo.task = TaskKind::vhd;
  EXPECT_EQ(validate_response(masked, 10, vo).at(0).kind, Finding::Kind::mask);
}

TEST(Round1, HalfUpOnDecimalReading) {
  EXPECT_EQ(round1(2.25), 2.3);
  EXPECT_EQ(round1(0.35), 0.4);
  EXPECT_EQ(round1(10.23), 10.2);
  EXPECT_EQ(round1(125.37), 125.4);
  EXPECT_EQ(round1(0.04), 0.0);
}

TEST(BuildSequence, MomentRetrievalShape) {
  Response r;
  r.events = {make_event(1.0, 4.0, "wash")};
  const auto l = build_sequence(two_frames(), r);
  EXPECT_EQ(l.frame_count * l.frame_block_size(), 28u);
  EXPECT_EQ(l.prompt_length, 28u + 2u + 1u);
  ASSERT_EQ(l.spans.size(), 3u);
  EXPECT_EQ(l.spans[0].length(), 14u);
  EXPECT_EQ(l.spans[1].length(), 1u);
  EXPECT_EQ(l.spans[2].length(), 5u);
  EXPECT_EQ(l.size(), 31u + 14u + 1u + 5u);
  const TokenSeq answer = l.tokens.slice(l.prompt_length, l.size());
  EXPECT_EQ(answer.render(), "<0><0><0><1><.><0><sep><0><0><0><4><.><0><sync><sync>wash<sync>");
  expect_layout_laws(l, 1);
}

TEST(BuildSequence, FrameBlocksInterleave) {
  const auto l = build_prompt(two_frames());
  for (std::size_t s = 0; s < 8; ++s) {
    EXPECT_EQ(l.tokens.tags[s], TokenTag::visual);
    EXPECT_EQ(l.tokens.ids[s], static_cast<int>(s));
  }
  EXPECT_EQ(l.tokens.slice(8, 14).render(), "<0><0><0><0><.><0>");
  EXPECT_EQ(l.tokens.ids[14], 8);
  EXPECT_EQ(l.tokens.slice(22, 28).render(), "<0><0><0><5><.><0>");
  EXPECT_EQ(prompt_instruction(l), "go");
}

TEST(BuildSequence, GeneralTaskPlaceholders) {
  VideoSample s = two_frames();
  s.task = TaskKind::general;
  Response r;
  r.events = {make_event(0, 0, "hi", {false, false, true})};
  const auto l = build_sequence(s, r);
  EXPECT_EQ(l.tokens.slice(l.prompt_length, l.size()).render(), "<sync><sync>hi<sync>");
  expect_layout_laws(l, 1);
}

TEST(BuildSequence, Errors) {
  VideoSample empty;
  empty.duration = 1;
  Response r;
  r.events = {make_event(0, 0, "hi", {false, false, true})};
  EXPECT_THROW(build_sequence(empty, r), ContractError);
  Response unsorted;
  unsorted.events = {make_event(3, 4, "a"), make_event(1, 2, "b")};
  EXPECT_THROW(build_sequence(two_frames(), unsorted), ContractError);
  Response inverted;
  inverted.events = {make_event(3, 1, "a")};
  EXPECT_THROW(build_sequence(two_frames(), inverted), ContractError);
}

TEST(BuildSequence, EndSentinelSpan) {
  Response r;
  r.events = {make_event(1, 2, "a"), make_event(3, 4, "b")};
  BuildOptions b;
  b.end_sentinel = true;
  const auto l = build_sequence(two_frames(), r, b);
  const auto end = end_sentinel_span(l);
  ASSERT_TRUE(end.has_value());
  EXPECT_EQ(end->length(), 3u);
  EXPECT_EQ(end->end, l.size());
  EXPECT_EQ(l.tokens.slice(end->begin, end->end).render(), "<sync><sync><eos>");
  EXPECT_EQ(factorized_logprob_spans(l).size(), 2u);
  const auto parsed = parse_sequence(l.tokens.slice(l.prompt_length, l.size()));
  EXPECT_TRUE(parsed.ended_with_sentinel);
  EXPECT_EQ(parsed.response, r);
}

TEST(FactorizedSpans, Counts) {
  Response one;
  one.events = {make_event(1, 2, "a")};
  const auto l1 = build_sequence(two_frames(), one);
  EXPECT_EQ(l1.spans.size(), 3u);
  EXPECT_EQ(factorized_logprob_spans(l1).at(0).score.length(), 1u);
  Response three;
  three.events = {make_event(1, 2, "a"), make_event(2, 3, "b"), make_event(3, 4, "c")};
  const auto l3 = build_sequence(two_frames(), three);
  ASSERT_EQ(l3.spans.size(), 9u);
  for (std::size_t i = 0; i < 9; ++i) {
    EXPECT_EQ(l3.spans[i].event, i / 3);
    EXPECT_EQ(static_cast<std::size_t>(l3.spans[i].component), i % 3);
  }
}

TEST(ParseSequence, RoundTripAllTasks) {
  std::mt19937_64 rng(21);
  for (int n = 0; n < 500; ++n) {
    const TaskKind task = gen::kAllTasks[n % 5];
    VideoSample s = gen::sample(rng, task, 1 + rng() % 4);
    const Response r = gen::response(rng, task, s.duration);
    BuildOptions b;
    b.end_sentinel = n % 2 == 0;
    const auto l = build_sequence(s, r, b);
    expect_layout_laws(l, r.events.size());
    const auto parsed = parse_sequence(l.tokens.slice(l.prompt_length, l.size()));
    ASSERT_EQ(parsed.response, r);
    ASSERT_TRUE(parsed.diagnostics.empty());
  }
}

TEST(ParseSequence, PlaceholderOnlyAnswer) {
  TokenSeq a;
  a.push_back(TokenTag::time, digit_vocab::kSync);
  a.push_back(TokenTag::score, digit_vocab::kSync);
  a.append(text_tokenize("hi"));
  a.push_back(TokenTag::text, text_vocab::kSync);
  const auto p = parse_sequence(a);
  ASSERT_EQ(p.response.events.size(), 1u);
  EXPECT_EQ(p.response.events[0].present, (PresentMask{false, false, true}));
  EXPECT_EQ(p.response.events[0].caption, "hi");
}

TEST(ParseSequence, TruncatedMidTimestamp) {
  Response r;
  r.events = {make_event(1, 2, "a")};
  const auto l = build_sequence(two_frames(), r);
  const TokenSeq answer = l.tokens.slice(l.prompt_length, l.prompt_length + 4);
  try {
    parse_sequence(answer);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 4u);
  }
  const auto lenient = parse_sequence(answer, ParseMode::lenient);
  EXPECT_TRUE(lenient.response.events.empty());
  EXPECT_FALSE(lenient.complete);
  EXPECT_FALSE(lenient.diagnostics.empty());
}

TEST(ParseSequence, ScoreBeforeTimeTerminal) {
  TokenSeq a;
  a.push_back(TokenTag::time, 1);
  a.push_back(TokenTag::score, digit_vocab::kSync);
  try {
    parse_sequence(a);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 1u);
  }
}

TEST(ParseSequence, LenientKeepsCompleteEvents) {
  Response r;
  r.events = {make_event(1, 2, "a"), make_event(3, 4, "b")};
  const auto l = build_sequence(two_frames(), r);
  TokenSeq answer = l.tokens.slice(l.prompt_length, l.size() - 3);
  const auto p = parse_sequence(answer, ParseMode::lenient);
  ASSERT_EQ(p.response.events.size(), 1u);
  EXPECT_EQ(p.response.events[0], r.events[0]);
  EXPECT_THROW(parse_sequence(answer), ParseError);
}

TEST(ParseSequence, SingleTimeValueIsError) {
  TokenSeq a = encode_time_list(std::vector<double>{3.0});
  a.push_back(TokenTag::score, digit_vocab::kSync);
  a.append(text_tokenize("x"));
  a.push_back(TokenTag::text, text_vocab::kSync);
  EXPECT_THROW(parse_sequence(a), ParseError);
}

TEST(Dump, RoundTrip) {
  std::mt19937_64 rng(8);
  for (int n = 0; n < 50; ++n) {
    const TaskKind task = gen::kAllTasks[n % 5];
    VideoSample s = gen::sample(rng, task, 2);
    const Response r = gen::response(rng, task, s.duration, 3);
    BuildOptions b;
    b.end_sentinel = n % 3 == 0;
    const auto l = build_sequence(s, r, b);
    std::istringstream is(dump_layout(l, {{"video_id", s.video_id}}));
    const ParsedDump d = parse_dump(is);
    EXPECT_EQ(d.layout.tokens, l.tokens);
    EXPECT_EQ(d.layout.head_assign, l.head_assign);
    EXPECT_EQ(d.layout.loss_mask, l.loss_mask);
    EXPECT_EQ(d.layout.prompt_length, l.prompt_length);
    EXPECT_EQ(d.header.at("video_id"), s.video_id);
    ASSERT_EQ(d.layout.spans.size(), l.spans.size());
    for (std::size_t i = 0; i < l.spans.size(); ++i) {
      EXPECT_EQ(d.layout.spans[i].begin, l.spans[i].begin);
      EXPECT_EQ(d.layout.spans[i].end, l.spans[i].end);
      EXPECT_EQ(d.layout.spans[i].component, l.spans[i].component);
    }
  }
}

TEST(Dump, Malformed) {
  std::istringstream missing("0  text  a  none  0\n");
  EXPECT_THROW(parse_dump(missing), ParseError);
  std::istringstream bad("# frames 0\n# slots 8\n# prompt_length 1\n0  text  <bogus>  none  0\n");
  EXPECT_THROW(parse_dump(bad), ParseError);
  std::istringstream gap("# frames 0\n# slots 8\n# prompt_length 1\n1  text  a  none  0\n");
  EXPECT_THROW(parse_dump(gap), ParseError);
  std::istringstream mask("# frames 0\n# slots 8\n# prompt_length 1\n0  text  a  none  1\n");
  EXPECT_THROW(parse_dump(mask), ParseError);
}

TEST(BuildSequence, Deterministic) {
  std::mt19937_64 rng(4);
  VideoSample s = gen::sample(rng, TaskKind::vhd, 3);
  const Response r = gen::response(rng, TaskKind::vhd, s.duration);
  EXPECT_EQ(dump_layout(build_sequence(s, r)), dump_layout(build_sequence(s, r)));
}
