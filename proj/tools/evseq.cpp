// evseq command-line tool. Exit codes: 0 success, 1 internal error,
// 2 user or input error.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "evseq/decoder.hpp"
#include "evseq/metrics.hpp"
#include "evseq/pipeline.hpp"
#include "evseq/sequence.hpp"
#include "evseq/synthetic.hpp"
#include "evseq/tokenizers.hpp"
#include "evseq/toynet.hpp"
#include "evseq/toyrun.hpp"

using namespace evseq;
using nlohmann::json;

namespace {

struct UserError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::ifstream open_in(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw UserError("cannot open '" + path + "'");
  return is;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path);
  if (!os) throw UserError("cannot write '" + path + "'");
  return os;
}

// Reads from a file, or stdin for "" / "-".
std::string slurp(const std::string& path) {
  std::ostringstream ss;
  if (path.empty() || path == "-") {
    ss << std::cin.rdbuf();
  } else {
    auto is = open_in(path);
    ss << is.rdbuf();
  }
  return ss.str();
}

// Writes to a file, or stdout for "" / "-".
void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    auto os = open_out(path);
    os << text;
  }
}

TokenTag kind_tag(const std::string& kind) {
  if (kind == "time") return TokenTag::time;
  if (kind == "score") return TokenTag::score;
  if (kind == "text") return TokenTag::text;
  throw UserError("unknown kind '" + kind + "' (time, score or text)");
}

// Splits display-form tokens ("<0><.>", "ab\x20<sync>", optionally
// whitespace separated) into symbols.
std::vector<std::string> split_symbols(const std::string& s, TokenTag tag) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < s.size();) {
    const char c = s[i];
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      ++i;
    } else if (c == '<') {
      const auto close = s.find('>', i);
      if (close == std::string::npos) throw ParseError("unterminated '<' in token stream", i);
      out.push_back(s.substr(i, close - i + 1));
      i = close + 1;
    } else if (c == '\\' && tag == TokenTag::text) {
      if (i + 4 > s.size()) throw ParseError("truncated escape in token stream", i);
      out.push_back(s.substr(i, 4));
      i += 4;
    } else if (tag == TokenTag::text) {
      out.emplace_back(1, c);
      ++i;
    } else {
      throw ParseError(std::string("unexpected character '") + c + "' in token stream", i);
    }
  }
  return out;
}

std::string format_values(const std::vector<double>& v) {
  std::string out;
  char buf[32];
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.1f", v[i]);
    if (i) out += ' ';
    out += buf;
  }
  return out;
}

std::vector<double> parse_values(const std::vector<std::string>& words) {
  std::vector<double> out;
  for (const auto& w : words) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(w, &used);
    } catch (const std::exception&) {
      throw UserError("not a number: '" + w + "'");
    }
    if (used != w.size()) throw UserError("not a number: '" + w + "'");
    out.push_back(v);
  }
  return out;
}

std::vector<std::string> words_of(const std::string& text) {
  std::istringstream is(text);
  std::vector<std::string> w;
  for (std::string s; is >> s;) w.push_back(s);
  return w;
}

// A VideoSample for layout purposes: frame times and features from the
// record when present, otherwise `frames` uniform frames with empty features.
VideoSample sample_for_record(const json& j, std::size_t line, std::size_t frames) {
  if (j.contains("features")) return sample_from_json(j, line);
  const AnnotationRecord r = record_from_json(j, line);
  VideoSample s;
  s.video_id = r.video_id;
  s.duration = r.duration;
  s.task = r.task;
  s.instruction = r.instruction;
  s.gold = r.events;
  if (j.contains("frame_times")) {
    s.frame_times = j["frame_times"].get<std::vector<double>>();
  } else {
    for (std::size_t i = 0; i < frames; ++i) {
      s.frame_times.push_back(round1(static_cast<double>(i) * r.duration / static_cast<double>(frames)));
      if (i > 0 && s.frame_times[i] <= s.frame_times[i - 1]) {
        throw UserError("duration " + std::to_string(r.duration) + " is too short for " + std::to_string(frames) +
                        " distinct frame times; lower --frames");
      }
    }
  }
  s.features = FrameFeatures(s.frame_times.size(), 1, 1);
  return s;
}

json parse_json_line(const std::string& line, std::size_t n) {
  try {
    return json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError("line " + std::to_string(n) + ": malformed JSON: " + e.what(), n);
  }
}

json prediction_json(const VideoSample& s, const GenerateResult& r) {
  AnnotationRecord rec;
  rec.video_id = s.video_id;
  rec.duration = s.duration;
  rec.task = s.task;
  rec.instruction = s.instruction;
  rec.events = r.response;
  json j = record_to_json(rec);
  j["truncated"] = r.truncated;
  j["finished"] = r.finished;
  if (!r.diagnostics.empty()) {
    j["diagnostics"] = json::array();
    for (const auto& d : r.diagnostics) j["diagnostics"].push_back({{"offset", d.offset}, {"message", d.message}});
  }
  return j;
}

ToyRunConfig config_from_checkpoint(const nn::CheckpointMeta& meta) {
  ToyRunConfig c;
  for (const auto& [k, v] : meta.values) {
    if (k.rfind("config.", 0) == 0) apply_setting(c, k.substr(7), v);
  }
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"evseq: event-sequence tokenization, toy multi-head decoding, grounding metrics and annotation tools"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "evseq 0.1.0");

  // tokenize ---------------------------------------------------------------
  std::string tok_kind = "time";
  std::vector<std::string> tok_values;
  auto* tokenize = app.add_subcommand("tokenize", "Encode values (or text) as display-form tokens");
  tokenize->add_option("--kind", tok_kind, "time, score or text")->capture_default_str();
  tokenize->add_option("values", tok_values, "Values or text; read from stdin when omitted");

  // detokenize --------------------------------------------------------------
  std::string detok_kind = "time";
  std::vector<std::string> detok_tokens;
  auto* detokenize = app.add_subcommand("detokenize", "Decode display-form tokens (strict grammar)");
  detokenize->add_option("--kind", detok_kind, "time, score or text")->capture_default_str();
  detokenize->add_option("tokens", detok_tokens, "Token stream; read from stdin when omitted");

  // build-seq ---------------------------------------------------------------
  std::string bs_record, bs_out;
  std::size_t bs_index = 0, bs_frames = 128, bs_slots = kDefaultSlotsPerFrame;
  bool bs_sentinel = false;
  auto* build_seq = app.add_subcommand("build-seq", "Lay out a JSONL record as an interleaved token sequence dump");
  build_seq->add_option("--record", bs_record, "JSONL file with annotation records or samples ('-' = stdin)")->required();
  build_seq->add_option("--index", bs_index, "Record index within the file")->capture_default_str();
  build_seq->add_option("--frames", bs_frames, "Frames for records without frame_times")->capture_default_str();
  build_seq->add_option("--slots", bs_slots, "Visual slots per frame")->capture_default_str();
  build_seq->add_flag("--end-sentinel", bs_sentinel, "Append the end-of-response sentinel triple");
  build_seq->add_option("--out", bs_out, "Output dump (default stdout)");

  // parse-seq ---------------------------------------------------------------
  std::string ps_dump, ps_out;
  bool ps_lenient = false;
  auto* parse_seq = app.add_subcommand("parse-seq", "Parse a sequence dump back into a JSONL record");
  parse_seq->add_option("dump", ps_dump, "Dump file ('-' or omitted = stdin)");
  parse_seq->add_flag("--lenient", ps_lenient, "Keep complete events and report grammar problems");
  parse_seq->add_option("--out", ps_out, "Output JSONL (default stdout)");

  // synth -------------------------------------------------------------------
  std::size_t sy_count = 10;
  std::uint64_t sy_seed = 1;
  std::string sy_out, sy_task = "dvc";
  bool sy_clip_random = false;
  auto* synth = app.add_subcommand("synth", "Write planted-event samples as JSONL");
  synth->add_option("--count", sy_count, "Number of samples")->capture_default_str();
  synth->add_option("--seed", sy_seed, "Generator seed")->capture_default_str();
  synth->add_option("--task", sy_task, "Task format of the gold events")->capture_default_str();
  synth->add_flag("--clip-random", sy_clip_random, "Sample one random frame per clip instead of clip starts");
  synth->add_option("--out", sy_out, "Output JSONL (default stdout)");

  // train-toy ---------------------------------------------------------------
  std::string tt_preset = "default", tt_config, tt_out, tt_metrics;
  std::vector<std::string> tt_set;
  bool tt_quiet = false, tt_dump_config = false;
  auto* train_toy = app.add_subcommand("train-toy", "Train the toy network on planted-event data");
  train_toy->add_option("--preset", tt_preset, "smoke, default or overfit")->capture_default_str();
  train_toy->add_option("--config", tt_config, "key=value config file applied over the preset");
  train_toy->add_option("--set", tt_set, "Override one setting, key=value (repeatable)");
  train_toy->add_option("--out", tt_out, "Checkpoint path");
  train_toy->add_option("--metrics", tt_metrics, "Write the loss curve and test metrics as JSON");
  train_toy->add_flag("--quiet", tt_quiet, "Only print the final summary");
  train_toy->add_flag("--print-config", tt_dump_config, "Print the resolved config and exit");

  // generate ----------------------------------------------------------------
  std::string gen_ckpt, gen_data, gen_split = "test", gen_out, gen_trace;
  std::vector<std::size_t> gen_index;
  bool gen_unconstrained = false, gen_constrained = false;
  std::size_t gen_max_tokens = 0;
  auto* generate_cmd = app.add_subcommand("generate", "Decode event sequences with a trained checkpoint");
  generate_cmd->add_option("--checkpoint", gen_ckpt, "Checkpoint written by train-toy")->required();
  generate_cmd->add_option("--data", gen_data, "Sample JSONL (default: regenerate the checkpoint's split)");
  generate_cmd->add_option("--split", gen_split, "train or test, when --data is not given")->capture_default_str();
  generate_cmd->add_option("--index", gen_index, "Sample indices (default all)");
  generate_cmd->add_flag("--constrained", gen_constrained, "Force the fixed-width grammar");
  generate_cmd->add_flag("--unconstrained", gen_unconstrained, "Sample from the full head vocabularies");
  generate_cmd->add_option("--max-tokens", gen_max_tokens, "Token budget per sample");
  generate_cmd->add_option("--trace", gen_trace, "JSONL decoding trace file");
  generate_cmd->add_option("--out", gen_out, "Predictions JSONL (default stdout)");

  // eval --------------------------------------------------------------------
  std::string ev_pred, ev_gold, ev_task, ev_json;
  double ev_hit = kDefaultHitThreshold;
  auto* eval = app.add_subcommand("eval", "Score predictions against gold records");
  eval->add_option("--pred", ev_pred, "Prediction JSONL")->required();
  eval->add_option("--gold", ev_gold, "Gold JSONL")->required();
  eval->add_option("--task", ev_task, "mr, dvc, vhd or vs")->required();
  eval->add_option("--hit-threshold", ev_hit, "Gold score that makes a clip a highlight")->capture_default_str();
  eval->add_option("--json", ev_json, "Also write the report as JSON");

  // filter ------------------------------------------------------------------
  std::string fi_in, fi_out, fi_report;
  auto* filter = app.add_subcommand("filter", "Apply the dense-caption quality checklist");
  filter->add_option("--in", fi_in, "dvc JSONL ('-' = stdin)")->required();
  filter->add_option("--out", fi_out, "Kept records JSONL");
  filter->add_option("--report", fi_report, "Per-record decisions (default stdout)");

  // bin-scores --------------------------------------------------------------
  std::string bi_in, bi_out, bi_scope = "event";
  double bi_min_clip = 1.0, bi_floor = 1.0;
  std::size_t bi_max_clips = 20;
  auto* bin = app.add_subcommand(
      "bin-scores",
      "Bin clip similarities into salient scores. Lines with 'similarities' get a 'scores' array; dvc records "
      "with 'clip_similarities' (one array per event) become vhd records");
  bin->add_option("--in", bi_in, "Input JSONL ('-' = stdin)")->required();
  bin->add_option("--out", bi_out, "Output JSONL (default stdout)");
  bin->add_option("--scope", bi_scope, "Rank clips within each event or across the video")->capture_default_str();
  bin->add_option("--min-clip-len", bi_min_clip, "Shortest clip in seconds")->capture_default_str();
  bin->add_option("--max-clips", bi_max_clips, "Clips per event at most")->capture_default_str();
  bin->add_option("--floor", bi_floor, "Score for clips below the lowest percentile")->capture_default_str();

  // make-vs -----------------------------------------------------------------
  std::string vs_in, vs_out;
  auto* make_vs = app.add_subcommand("make-vs", "Pick the best clip per event of vhd records");
  make_vs->add_option("--in", vs_in, "vhd JSONL ('-' = stdin)")->required();
  make_vs->add_option("--out", vs_out, "vs JSONL (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*tokenize) {
      const TokenTag tag = kind_tag(tok_kind);
      std::vector<std::string> words = tok_values;
      if (words.empty()) {
        std::string in = slurp("-");
        while (!in.empty() && (in.back() == '\n' || in.back() == '\r')) in.pop_back();
        words = tag == TokenTag::text ? std::vector<std::string>{in} : words_of(in);
      }
      TokenSeq seq;
      if (tag == TokenTag::text) {
        std::string text;
        for (std::size_t i = 0; i < words.size(); ++i) text += (i ? " " : "") + words[i];
        seq = text_tokenize(text);
        seq.push_back(TokenTag::text, text_vocab::kSync);
      } else {
        const auto values = parse_values(words);
        seq = tag == TokenTag::time ? encode_time_list(values) : encode_score_list(values);
      }
      std::cout << seq.render() << '\n';
    } else if (*detokenize) {
      const TokenTag tag = kind_tag(detok_kind);
      std::string text;
      for (std::size_t i = 0; i < detok_tokens.size(); ++i) text += (i ? " " : "") + detok_tokens[i];
      if (detok_tokens.empty()) text = slurp("-");
      TokenSeq seq;
      for (const auto& sym : split_symbols(text, tag)) {
        const auto id = parse_token_symbol(tag, sym);
        if (!id) throw ParseError("unknown " + std::string(to_string(tag)) + " token '" + sym + "'", seq.size());
        seq.push_back(tag, *id);
      }
      if (tag == TokenTag::text) {
        std::vector<int> ids(seq.ids.begin(), seq.ids.end());
        if (!ids.empty() && ids.back() == text_vocab::kSync) ids.pop_back();
        std::cout << text_detokenize(ids) << '\n';
      } else {
        const auto values = tag == TokenTag::time ? decode_time_list(seq) : decode_score_list(seq);
        std::cout << format_values(values) << '\n';
      }
    } else if (*build_seq) {
      std::istringstream in(slurp(bs_record));
      const auto lines = read_lines(in);
      if (bs_index >= lines.size()) throw UserError("record index " + std::to_string(bs_index) + " out of range");
      const auto& [n, line] = lines[bs_index];
      const VideoSample s = sample_for_record(parse_json_line(line, n), n, bs_frames);
      BuildOptions b;
      b.slots_per_frame = bs_slots;
      b.end_sentinel = bs_sentinel;
      const SequenceLayout layout = build_sequence(s, s.gold, b);
      char dur[32];
      std::snprintf(dur, sizeof dur, "%.17g", s.duration);
      emit(bs_out, dump_layout(layout, {{"video_id", s.video_id}, {"duration", dur}, {"task", std::string(to_string(s.task))}}));
    } else if (*parse_seq) {
      std::istringstream in(slurp(ps_dump));
      const ParsedDump d = parse_dump(in);
      const TokenSeq answer = d.layout.tokens.slice(d.layout.prompt_length, d.layout.size());
      const auto parsed = parse_sequence(answer, ps_lenient ? ParseMode::lenient : ParseMode::strict);
      AnnotationRecord r;
      auto get = [&](const char* k) {
        auto it = d.header.find(k);
        return it == d.header.end() ? std::string() : it->second;
      };
      r.video_id = get("video_id");
      r.duration = get("duration").empty() ? 0.0 : std::stod(get("duration"));
      const auto task = parse_task_kind(get("task"));
      r.task = task ? *task : TaskKind::general;
      r.instruction = prompt_instruction(d.layout);
      r.events = parsed.response;
      json j = record_to_json(r);
      if (ps_lenient) {
        j["diagnostics"] = json::array();
        for (const auto& diag : parsed.diagnostics) j["diagnostics"].push_back({{"offset", diag.offset}, {"message", diag.message}});
      }
      emit(ps_out, j.dump() + '\n');
    } else if (*synth) {
      SyntheticConfig c;
      const auto task = parse_task_kind(sy_task);
      if (!task) throw UserError("unknown task '" + sy_task + "'");
      c.task = *task;
      c.random_clip_sampling = sy_clip_random;
      const auto ds = make_synthetic(c, sy_count, sy_seed);
      std::ostringstream os;
      write_samples(os, ds.samples);
      emit(sy_out, os.str());
    } else if (*train_toy) {
      ToyRunConfig c;
      try {
        c = toy_preset(tt_preset);
      } catch (const ContractError&) {
        throw UserError("unknown preset '" + tt_preset + "' (smoke, default or overfit)");
      }
      if (!tt_config.empty()) {
        auto is = open_in(tt_config);
        load_config(c, is);
      }
      for (const auto& kv : tt_set) apply_setting_line(c, kv);
      c.model.validate();
      if (tt_dump_config) {
        write_config(std::cout, c);
        return 0;
      }
      const ToyData data = make_toy_data(c);
      const ToyRunResult res = run_toy(c, data, tt_quiet ? nullptr : &std::cerr);
      std::map<std::string, std::string> meta;
      for (const auto& [k, v] : config_values(c)) meta["config." + k] = v;
      meta["preset"] = tt_preset;
      if (!tt_out.empty()) {
        auto os = open_out(tt_out);
        nn::save_checkpoint(os, res.params, meta);
      }
      const double final_loss = res.history.epochs.back().mean_loss;
      std::printf("final_loss=%.6f\n", final_loss);
      std::cout << res.test_report.text();
      std::printf("test_truncated=%zu\n", res.test_truncated);
      std::printf("seconds=%.1f\n", res.seconds);
      if (!tt_metrics.empty()) {
        json m;
        m["final_loss"] = final_loss;
        m["test"] = res.test_report.json();
        m["epochs"] = json::array();
        for (const auto& e : res.history.epochs) {
          json ej = {{"epoch", e.epoch}, {"loss", e.mean_loss}, {"lr", e.learning_rate},
                     {"loss_time", e.head_loss[0]}, {"loss_score", e.head_loss[1]}, {"loss_text", e.head_loss[2]}};
          for (const auto& [k, v] : e.eval) ej["eval_" + k] = v;
          m["epochs"].push_back(ej);
        }
        m["config"] = config_values(c);
        auto os = open_out(tt_metrics);
        os << m.dump(2) << '\n';
      }
    } else if (*generate_cmd) {
      auto is = open_in(gen_ckpt);
      nn::CheckpointMeta meta;
      const auto params = nn::load_checkpoint<float>(is, &meta);
      const ToyRunConfig c = config_from_checkpoint(meta);
      std::vector<VideoSample> samples;
      if (!gen_data.empty()) {
        std::istringstream in(slurp(gen_data));
        samples = read_samples(in);
      } else {
        if (gen_split != "train" && gen_split != "test") throw UserError("--split must be train or test");
        ToyRunConfig cc = c;
        cc.model = params.config;
        const ToyData data = make_toy_data(cc);
        samples = gen_split == "train" ? data.train.samples : data.test.samples;
      }
      if (!gen_index.empty()) {
        std::vector<VideoSample> pick;
        for (auto i : gen_index) {
          if (i >= samples.size()) throw UserError("sample index " + std::to_string(i) + " out of range");
          pick.push_back(samples[i]);
        }
        samples = std::move(pick);
      }
      if (gen_constrained && gen_unconstrained) throw UserError("--constrained and --unconstrained are exclusive");
      GenerateOptions g = toy_generate_options(c);
      if (gen_constrained) g.constrained = true;
      if (gen_unconstrained) g.constrained = false;
      if (gen_max_tokens) g.max_tokens = gen_max_tokens;
      std::ofstream trace;
      if (!gen_trace.empty()) {
        trace = open_out(gen_trace);
        g.trace = &trace;
      }
      std::ostringstream os;
      BuildOptions b;
      b.slots_per_frame = params.config.slots_per_frame;
      for (const auto& s : samples) {
        const SequenceLayout prompt = build_prompt(s, b);
        nn::ToyNetScorer<float> scorer(params, s);
        GenerateOptions gs = g;
        const std::size_t room = params.config.max_positions > prompt.size() ? params.config.max_positions - prompt.size() : 0;
        gs.max_tokens = std::min(gs.max_tokens, room);
        os << prediction_json(s, generate(scorer, prompt, gs)).dump() << '\n';
      }
      emit(gen_out, os.str());
    } else if (*eval) {
      const auto task = parse_task_kind(ev_task);
      if (!task || *task == TaskKind::general) throw UserError("--task must be mr, dvc, vhd or vs");
      auto load = [](const std::string& path) {
        std::istringstream in(slurp(path));
        std::vector<EvalRecord> out;
        for (const auto& [n, line] : read_lines(in)) {
          try {
            out.push_back(eval_record_from_json(parse_json_line(line, n)));
          } catch (const ParseError& e) {
            throw ParseError(path + " line " + std::to_string(n) + ": " + e.what(), n);
          }
        }
        return out;
      };
      const auto pred = load(ev_pred);
      const auto gold = load(ev_gold);
      const EvalReport rep = evaluate_records(pred, gold, *task, ev_hit);
      std::cout << rep.text();
      if (!ev_json.empty()) {
        auto os = open_out(ev_json);
        os << rep.json().dump(2) << '\n';
      }
    } else if (*filter) {
      std::istringstream in(slurp(fi_in));
      std::ostringstream kept, report;
      std::size_t n_keep = 0, n_reject = 0;
      for (const auto& [n, line] : read_lines(in)) {
        const AnnotationRecord r = parse_record(line, n);
        const FilterDecision d = filter_dvc(r);
        report << r.video_id << '\t' << (d.keep ? "keep" : "reject");
        for (std::size_t i = 0; i < d.reasons.size(); ++i) {
          report << '\t' << to_string(d.reasons[i]) << ": " << d.details[i];
        }
        report << '\n';
        if (d.keep) {
          kept << line << '\n';
          ++n_keep;
        } else {
          ++n_reject;
        }
      }
      if (!fi_out.empty()) emit(fi_out, kept.str());
      emit(fi_report, report.str());
      std::cerr << "kept " << n_keep << ", rejected " << n_reject << '\n';
    } else if (*bin) {
      HighlightOptions ho;
      if (bi_scope != "event" && bi_scope != "video") throw UserError("--scope must be event or video");
      ho.scope = bi_scope == "event" ? BinScope::event : BinScope::video;
      ho.min_clip_len = bi_min_clip;
      ho.max_clips = bi_max_clips;
      ho.bins.floor_score = bi_floor;
      std::istringstream in(slurp(bi_in));
      std::ostringstream os;
      for (const auto& [n, line] : read_lines(in)) {
        json j = parse_json_line(line, n);
        if (j.contains("similarities")) {
          std::vector<double> sims;
          try {
            sims = j["similarities"].get<std::vector<double>>();
          } catch (const json::exception&) {
            throw ParseError("line " + std::to_string(n) + ": field 'similarities' must hold numbers", n);
          }
          j["scores"] = bin_scores(sims, ho.bins);
          os << j.dump() << '\n';
          continue;
        }
        const AnnotationRecord r = record_from_json(j, n);
        if (!j.contains("clip_similarities") || !j["clip_similarities"].is_array() ||
            j["clip_similarities"].size() != r.events.size()) {
          throw ParseError("line " + std::to_string(n) + ": field 'clip_similarities' needs one array per event", n);
        }
        const json& cs = j["clip_similarities"];
        auto sim = [&](std::size_t k, std::size_t c, const Event&) {
          if (c >= cs[k].size() || !cs[k][c].is_number()) {
            throw ParseError("line " + std::to_string(n) + ": clip_similarities[" + std::to_string(k) + "] has no number for clip " +
                                 std::to_string(c),
                             n);
          }
          return cs[k][c].get<double>();
        };
        os << serialize_record(make_highlight_record(r, sim, ho)) << '\n';
      }
      emit(bi_out, os.str());
    } else if (*make_vs) {
      std::istringstream in(slurp(vs_in));
      std::ostringstream os;
      for (const auto& [n, line] : read_lines(in)) {
        const AnnotationRecord r = parse_record(line, n);
        if (r.task != TaskKind::vhd) throw ParseError("line " + std::to_string(n) + ": expected a vhd record", n);
        os << serialize_record(select_summary_clips(r)) << '\n';
      }
      emit(vs_out, os.str());
    }
  } catch (const UserError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const RangeError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const nn::TrainingDiverged& e) {
    std::cerr << "error: training diverged: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
