#pragma once

// Constructed pipeline fixtures shared by unit and acceptance tests.

#include <string>
#include <vector>

#include "evseq/pipeline.hpp"

namespace fixtures {

inline evseq::Event caption_event(double s, double e, const std::string& caption) {
  evseq::Event ev;
  ev.start = s;
  ev.end = e;
  ev.caption = caption;
  ev.present = evseq::mask_for(evseq::TaskKind::dvc);
  return ev;
}

inline const std::vector<std::string>& good_captions() {
  static const std::vector<std::string> c = {
      "a woman slices two ripe tomatoes on a board",
      "the chef pours olive oil into a hot pan",
      "someone stirs the thick sauce with a wooden spoon",
      "he sprinkles fresh basil leaves over the plate",
      "finally the family sits down and eats dinner",
      "a child washes muddy carrots under the tap",
  };
  return c;
}

inline evseq::AnnotationRecord dvc_record(const std::string& id, std::vector<std::string> captions) {
  evseq::AnnotationRecord r;
  r.video_id = id;
  r.duration = 120.0;
  r.task = evseq::TaskKind::dvc;
  r.instruction = "describe the video";
  for (std::size_t i = 0; i < captions.size(); ++i) {
    r.events.events.push_back(caption_event(10.0 * static_cast<double>(i), 10.0 * static_cast<double>(i) + 8.0,
                                            captions[i]));
  }
  return r;
}

inline evseq::AnnotationRecord compliant() {
  auto c = good_captions();
  c.resize(5);
  return dvc_record("ok", c);
}

// Each violates exactly one checklist rule.
inline evseq::AnnotationRecord short_caption() {
  auto c = good_captions();
  c.resize(5);
  c[2] = "a man";
  return dvc_record("short", c);
}

inline evseq::AnnotationRecord similar_captions() {
  auto c = good_captions();
  c.resize(5);
  c[3] = "the chef pours olive oil into a hot pot";
  return dvc_record("similar", c);
}

inline evseq::AnnotationRecord too_few_events() {
  auto c = good_captions();
  c.resize(4);
  return dvc_record("few", c);
}

inline evseq::AnnotationRecord special_character() {
  auto c = good_captions();
  c.resize(5);
  c[1] = "the cook mixes eggs, then stirs them";
  return dvc_record("comma", c);
}

// 1001 similarities on 21 distinct levels. A clip at level j beats the
// clips of every lower level; level sizes put the beaten share of level j
// just above the j-th percentile threshold, so level j bins to the j-th
// score of the ladder.
inline std::vector<double> similarity_ladder(std::vector<std::size_t>* level_of = nullptr) {
  const std::size_t total = 1001;
  std::vector<std::size_t> lower(21, 0);
  for (std::size_t j = 1; j < 21; ++j) {
    const long long milli = evseq::kBinThresholdsMilli[j];
    // smallest count c with c / 1000 >= milli / 100000
    lower[j] = static_cast<std::size_t>((milli + 99) / 100);
  }
  std::vector<double> sims;
  if (level_of) level_of->clear();
  for (std::size_t j = 0; j < 21; ++j) {
    const std::size_t next = j + 1 < 21 ? lower[j + 1] : total;
    for (std::size_t i = lower[j]; i < next; ++i) {
      sims.push_back(-2.0 + 0.2 * static_cast<double>(j));
      if (level_of) level_of->push_back(j);
    }
  }
  return sims;
}

}  // namespace fixtures
