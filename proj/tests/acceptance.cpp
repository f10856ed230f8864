// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS/FAIL line per criterion. Exit status is nonzero
// when any criterion fails.

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "oracles/caption_oracles.hpp"
#include "synthaug/corpus.hpp"
#include "synthaug/datasets.hpp"
#include "synthaug/image.hpp"
#include "synthaug/metrics.hpp"
#include "synthaug/pipeline.hpp"
#include "synthaug/trainer.hpp"

namespace fs = std::filesystem;
using namespace synthaug;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

fs::path g_root;

fs::path scratch(const std::string& name) {
  const fs::path p = g_root / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string file_sha(const fs::path& p) {
  const auto bytes = read_file_bytes(p);
  return sha256_hex(std::span<const std::uint8_t>(bytes));
}

/// Relative path -> sha256 for every file under `dir`, skipping wall-clock timings.
std::map<std::string, std::string> tree_checksums(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().filename() == "timings.json") continue;
    out[fs::relative(e.path(), dir).generic_string()] = file_sha(e.path());
  }
  return out;
}

std::string diff_summary(const std::map<std::string, std::string>& a,
                         const std::map<std::string, std::string>& b) {
  std::size_t only_a = 0, only_b = 0, differ = 0;
  for (const auto& [k, v] : a) {
    auto it = b.find(k);
    if (it == b.end()) ++only_a;
    else if (it->second != v) ++differ;
  }
  for (const auto& [k, v] : b) only_b += a.count(k) == 0;
  return fmt::format("{} only in first, {} only in second, {} differ", only_a, only_b, differ);
}

/// Real-image manifest with `m` placeholder paths per class; no pixels.
fs::path placeholder_manifest(const fs::path& dir, std::size_t n, std::size_t m) {
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < n; ++i) labels.push_back(fmt::format("class{:03}", i));
  auto ds = datasets::make_dataset("placeholder", labels, {32, 32, 3});
  for (auto& cat : ds.categories) {
    for (std::size_t j = 0; j < m; ++j) {
      cat.real_images.push_back({(dir / "img" / cat.label.label_text / fmt::format("{:04}.png", j))
                                     .generic_string(),
                                 datasets::Provenance::real, Split::train});
    }
  }
  const fs::path file = dir / "real.jsonl";
  datasets::save_manifest(ds, file);
  return file;
}

// 1 ------------------------------------------------------------------------
Outcome count_laws() {
  const fs::path dir = scratch("count");
  pipeline::PipelineConfig c;
  c.dataset = placeholder_manifest(dir / "toy", 2, 50).string();
  c.manifest_only = true;
  c.cache_dir = (dir / "cache").string();
  // round(ratio * 50) for ratio in {0.2, 0.5, 1, 2, 5}
  const std::vector<std::pair<double, std::size_t>> want = {
      {0.2, 10}, {0.5, 25}, {1.0, 50}, {2.0, 100}, {5.0, 250}};
  std::vector<std::string> seen;
  bool ok = true;
  for (const auto& [ratio, expect] : want) {
    c.ratio = ratio;
    c.out_dir = (dir / fmt::format("r{}", ratio)).string();
    pipeline::cmd_build_dataset(c);
    const auto ds = datasets::load_manifest(fs::path(c.out_dir) / "dataset.jsonl", false);
    std::vector<std::size_t> per;
    for (const auto& cat : ds.categories) {
      per.push_back(cat.synthetic_images.size());
      ok = ok && cat.synthetic_images.size() == expect && cat.real_images.size() == 50;
    }
    seen.push_back(fmt::format("{}->{}", ratio, fmt::join(per, "/")));
  }
  c.dataset = placeholder_manifest(dir / "cifar", 100, 500).string();
  c.ratio = 1.0;
  c.out_dir = (dir / "cifar_out").string();
  pipeline::cmd_build_dataset(c);
  const auto big = datasets::load_manifest(fs::path(c.out_dir) / "dataset.jsonl", false);
  const std::size_t total = big.count(datasets::Provenance::synthetic);
  ok = ok && total == 50000;
  return {ok, fmt::format("toy per-class synthetic {}; 100x500 at 1.0 -> {} synthetic (want 50000)",
                          fmt::join(seen, ", "), total)};
}

// 2 ------------------------------------------------------------------------
Outcome long_tail_law() {
  bool ok = true;
  std::vector<std::string> notes;
  const std::vector<std::pair<std::size_t, std::size_t>> cases = {
      {3, 1}, {3, 9}, {4, 1}, {4, 10}, {100, 500}, {100, 1}};
  for (const auto& [n, m] : cases) {
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < n; ++i) labels.push_back(fmt::format("c{}", i));
    auto ds = datasets::make_dataset("lt", labels, {8, 8, 3});
    for (auto& cat : ds.categories)
      for (std::size_t j = 0; j < m; ++j)
        cat.real_images.push_back({fmt::format("{}/{}.png", cat.label.label_text, j),
                                   datasets::Provenance::real, Split::train});
    const auto lt = datasets::make_long_tail(ds, 11);
    std::size_t bad = 0;
    for (std::size_t i = 1; i <= n; ++i) {
      const std::size_t expect = std::max<std::size_t>(1, (i * m) / n);
      if (lt.categories[i - 1].real_images.size() != expect) ++bad;
      if (n == 100 && m == 500 && lt.categories[i - 1].real_images.size() != 5 * i) ++bad;
    }
    ok = ok && bad == 0;
    std::vector<std::size_t> head;
    for (std::size_t i = 0; i < std::min<std::size_t>(n, 4); ++i)
      head.push_back(lt.categories[i].real_images.size());
    notes.push_back(fmt::format("n={} m={}: {}{} ({} off)", n, m, fmt::join(head, ","),
                                n > 4 ? ",..." : "", bad));
  }
  return {ok, fmt::format("{}", fmt::join(notes, "; "))};
}

// 3 ------------------------------------------------------------------------
Outcome prompt_golden() {
  std::ifstream in(fs::path(SYNTHAUG_GOLDEN_DIR) / "prompts.txt");
  if (!in) return {false, "golden file missing"};
  std::string line;
  std::vector<std::size_t> sizes;
  bool ok = true;
  while (std::getline(in, line)) {
    const auto tab = line.find('\t');
    corpus::EntitySet e;
    std::stringstream names(line.substr(0, tab));
    for (std::string w; std::getline(names, w, ',');) e.entities.push_back(w);
    const std::string got = corpus::render_prompt(e);
    ok = ok && got == line.substr(tab + 1) && got.rfind(corpus::kPromptPrefix, 0) == 0;
    sizes.push_back(e.entities.size());
  }
  ok = ok && sizes == std::vector<std::size_t>{1, 2, 3, 5};
  return {ok, fmt::format("byte-exact for n in {{{}}}", fmt::join(sizes, ", "))};
}

// 4 ------------------------------------------------------------------------
fs::path toy_dataset(const std::string& name, std::size_t per_class, std::size_t test_per_class,
                     int size) {
  pipeline::PipelineConfig c;
  c.labels = {"bike", "chair"};
  c.toy_per_class = per_class;
  c.toy_test_per_class = test_per_class;
  c.width = c.height = size;
  c.name = name;
  c.out_dir = scratch(name).string();
  pipeline::cmd_make_toy(c);
  return c.out_dir;
}

Outcome determinism() {
  const auto start = std::chrono::steady_clock::now();
  const fs::path toy = toy_dataset("det_toy", 50, 1, 32);
  const fs::path run = g_root / "det_run";
  auto once = [&] {
    fs::remove_all(run);
    pipeline::PipelineConfig c;
    c.dataset = (toy / "train.jsonl").string();
    c.ratio = 1.0;
    c.seed = 5;
    c.out_dir = (run / "gen").string();
    c.cache_dir = (run / "cache").string();
    const auto g = pipeline::cmd_gen_images(c);
    c.images_manifest = (run / "gen" / "images.jsonl").string();
    c.out_dir = (run / "build").string();
    pipeline::cmd_build_dataset(c);
    return std::make_pair(tree_checksums(run), g.value);
  };
  const auto [a, na] = once();
  const auto [b, nb] = once();
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::size_t images = 0;
  for (const auto& [k, v] : a) images += k.ends_with(".ppm");
  const bool ok = a == b && images == 100 && na == 100 && nb == 100 && secs < 60;
  return {ok, fmt::format("{} files ({} images, both runs from an empty cache) compared: {}; {:.1f}s",
                          a.size(), images, diff_summary(a, b), secs)};
}

// 5 ------------------------------------------------------------------------
std::vector<metrics::CaptionPair> random_corpus(Rng& rng) {
  static const char* vocab[] = {"a", "dog", "cat", "red", "runs", "on"};
  auto sentence = [&] {
    metrics::Tokens t;
    const std::size_t len = 1 + rng.uniform_index(6);
    for (std::size_t i = 0; i < len; ++i) t.push_back(vocab[rng.uniform_index(6)]);
    return t;
  };
  std::vector<metrics::CaptionPair> c;
  const std::size_t n = 2 + rng.uniform_index(4);
  for (std::size_t i = 0; i < n; ++i) {
    metrics::CaptionPair p;
    p.image_id = std::to_string(i);
    p.hypothesis = sentence();
    const std::size_t refs = 1 + rng.uniform_index(3);
    for (std::size_t r = 0; r < refs; ++r) p.references.push_back(sentence());
    c.push_back(std::move(p));
  }
  return c;
}

Outcome metric_oracles() {
  Rng rng(4242);
  double worst = 0;
  for (int t = 0; t < 50; ++t) {
    const auto c = random_corpus(rng);
    std::vector<oracle::Item> o;
    for (const auto& p : c) o.push_back({p.hypothesis, p.references});
    worst = std::max({worst, std::abs(metrics::bleu4(c) - oracle::bleu4(o)),
                      std::abs(metrics::rouge_l_corpus(c) - oracle::rouge_l_corpus(o)),
                      std::abs(metrics::cider_d(c) - oracle::cider_d(o))});
  }
  const std::vector<metrics::CaptionPair> same = {
      {"1", metrics::tokenize("a man rides a red bike"), {metrics::tokenize("a man rides a red bike")}},
      {"2", metrics::tokenize("two dogs play in the snow"), {metrics::tokenize("two dogs play in the snow")}}};
  const double b = metrics::bleu4(same), r = metrics::rouge_l_corpus(same), d = metrics::cider_d(same);
  const bool ok = worst <= 1e-9 && b == 1.0 && r == 1.0 && d == 10.0;
  return {ok, fmt::format("max |impl - oracle| = {:.3g} over 50 corpora (tol 1e-9); identical: "
                          "BLEU4 {}, ROUGE-L {}, CIDEr-D {}",
                          worst, b, r, d)};
}

// 6 ------------------------------------------------------------------------
Outcome scheduler() {
  const trainer::TrainConfig c;
  const std::vector<std::pair<int, double>> want = {
      {0, 0.01}, {9, 0.1}, {60, 0.02}, {120, 0.004}, {160, 0.0008}};
  bool ok = true;
  std::vector<std::string> got;
  for (const auto& [epoch, lr] : want) {
    const double v = trainer::lr_schedule(c, epoch);
    ok = ok && v == lr;
    got.push_back(fmt::format("e{}={}", epoch, v));
  }
  return {ok, fmt::format("{} (exact equality)", fmt::join(got, " "))};
}

// 7 ------------------------------------------------------------------------
// Fixed recipe: the default schedule with every epoch count scaled by 1/20.
trainer::TrainConfig few_shot_recipe() {
  trainer::TrainConfig c;
  c.epochs = 10;
  c.milestones = {3, 6, 8};
  c.warmup_epochs = 1;
  c.seeds = {7, 17, 42};
  return c;
}

Outcome few_shot_gain() {
  const auto start = std::chrono::steady_clock::now();
  // 5 real train images per class; the 50 per class "test" images act as an
  // independent real validation set.
  const fs::path toy = toy_dataset("fewshot_toy", 5, 50, 16);
  const fs::path dir = scratch("fewshot");
  pipeline::PipelineConfig c;
  c.dataset = (toy / "train.jsonl").string();
  c.width = c.height = 16;
  c.ratio = 20.0;  // 100 synthetic per class
  c.cache_dir = (dir / "cache").string();
  c.out_dir = (dir / "gen").string();
  pipeline::cmd_gen_images(c);
  c.images_manifest = (dir / "gen" / "images.jsonl").string();
  c.out_dir = (dir / "aug").string();
  pipeline::cmd_build_dataset(c);

  const auto real = datasets::load_manifest(toy / "train.jsonl");
  const auto aug = datasets::load_manifest(dir / "aug" / "dataset.jsonl");
  const auto val = datasets::load_manifest(toy / "test.jsonl");
  const auto stdz = imagegen::Standardization<float>::uniform(0.5f, 0.25f);
  const auto val_t = trainer::to_tensors<float>(val, datasets::load_image, stdz);
  const auto recipe = few_shot_recipe();

  auto mean_val = [&](const datasets::Dataset& ds, std::vector<double>& each) {
    const auto t = trainer::to_tensors<float>(ds, datasets::load_image, stdz);
    double sum = 0;
    for (std::uint64_t seed : recipe.seeds) {
      auto model = trainer::make_classifier<float>("convnet");
      model->init(2, ds.image_spec, seed);
      const auto r = trainer::train(*model, t, val_t, recipe, seed);
      each.push_back(r.best_val_accuracy);
      sum += r.best_val_accuracy;
    }
    return sum / static_cast<double>(recipe.seeds.size());
  };
  std::vector<double> base_each, aug_each;
  const double base = mean_val(real, base_each);
  const double with = mean_val(aug, aug_each);
  const double gain_pp = 100.0 * (with - base);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const bool ok = gain_pp >= 10.0 && secs <= 300;
  return {ok, fmt::format("val acc 5-real {:.3f} [{:.2f}] vs +100 synthetic {:.3f} [{:.2f}]: "
                          "{:+.1f} pp (need >= +10.0); {} vs {} train images; {:.0f}s",
                          base, fmt::join(base_each, " "), with, fmt::join(aug_each, " "),
                          gain_pp, real.total_images(), aug.total_images(), secs)};
}

// 8 ------------------------------------------------------------------------
Outcome holdout_law() {
  auto ds = datasets::make_dataset("holdout", std::vector<std::string>{"a", "b", "c"}, {8, 8, 3});
  for (auto& cat : ds.categories) {
    for (int j = 0; j < 500; ++j)
      cat.real_images.push_back({fmt::format("r/{}/{}.png", cat.label.label_text, j),
                                 datasets::Provenance::real, Split::train});
    for (int j = 0; j < 60; ++j)
      cat.synthetic_images.push_back({fmt::format("s/{}/{}.png", cat.label.label_text, j),
                                      datasets::Provenance::synthetic, Split::train});
    for (int j = 0; j < 7; ++j)
      cat.adversarial_images.push_back({fmt::format("x/{}/{}.png", cat.label.label_text, j),
                                        datasets::Provenance::adversarial, Split::train});
  }
  std::size_t bad = 0, leaks = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto [train, val] = datasets::split_holdout(ds, 0.2, seed);
    for (std::size_t c = 0; c < 3; ++c) {
      const auto& t = train.categories[c];
      const auto& v = val.categories[c];
      if (t.real_images.size() != 400 || v.real_images.size() != 100) ++bad;
      if (t.synthetic_images.size() != 60 || t.adversarial_images.size() != 7) ++bad;
      leaks += v.synthetic_images.size() + v.adversarial_images.size();
      for (const auto& r : v.real_images) leaks += r.provenance != datasets::Provenance::real;
    }
  }
  return {bad == 0 && leaks == 0,
          fmt::format("100 seeds x 3 classes: {} count violations, {} synthetic/adversarial in val",
                      bad, leaks)};
}

// 9 ------------------------------------------------------------------------
std::size_t count_meta(const fs::path& cache) {
  std::size_t n = 0;
  std::error_code ec;
  for (auto it = fs::recursive_directory_iterator(cache, ec); !ec && it != fs::recursive_directory_iterator();
       it.increment(ec)) {
    n += it->path().extension() == ".meta";
  }
  return n;
}

int run_cli(const std::vector<std::string>& args, std::function<bool(pid_t)> while_running = {}) {
  const pid_t pid = fork();
  if (pid == 0) {
    std::vector<char*> argv;
    std::string exe = SYNTHAUG_CLI;
    argv.push_back(exe.data());
    std::vector<std::string> copy = args;
    for (auto& a : copy) argv.push_back(a.data());
    argv.push_back(nullptr);
    if (std::freopen("/dev/null", "w", stderr) == nullptr) _exit(126);
    execv(exe.c_str(), argv.data());
    _exit(127);
  }
  int status = 0;
  if (while_running) {
    while (waitpid(pid, &status, WNOHANG) == 0) {
      if (while_running(pid)) {
        waitpid(pid, &status, 0);
        break;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
  } else {
    waitpid(pid, &status, 0);
  }
  if (WIFSIGNALED(status)) return -WTERMSIG(status);
  return WEXITSTATUS(status);
}

Outcome idempotent_resume() {
  const fs::path toy = toy_dataset("resume_toy", 50, 1, 32);
  const std::size_t total = 500;  // 2 classes x 50 real x ratio 5
  auto args = [&](const fs::path& out) {
    return std::vector<std::string>{"gen-images",    "--dataset", (toy / "train.jsonl").string(),
                                    "--ratio",       "5",         "--seed",
                                    "9",             "--out_dir", out.string()};
  };
  const fs::path clean = scratch("resume_clean");
  const fs::path killed = scratch("resume_killed");
  const int rc_clean = run_cli(args(clean));

  std::size_t at_kill = 0;
  const int rc_kill = run_cli(args(killed), [&](pid_t pid) {
    const std::size_t n = count_meta(killed / "cache");
    if (n >= 100) {
      kill(pid, SIGKILL);
      at_kill = n;
      return true;
    }
    return false;
  });
  const std::size_t before = count_meta(killed / "cache");
  const int rc_resume = run_cli(args(killed));
  nlohmann::json report;
  std::ifstream(killed / "gen_report.json") >> report;
  const std::size_t hits = report.value("cache_hits", std::size_t{0});
  const std::size_t generated = report.value("generated", std::size_t{0});

  const auto a = tree_checksums(clean / "cache");
  const auto b = tree_checksums(killed / "cache");
  const bool manifests_equal = file_sha(clean / "images.jsonl") == file_sha(killed / "images.jsonl");
  const bool ok = rc_clean == 0 && rc_kill == -SIGKILL && before < total && rc_resume == 0 &&
                  a == b && manifests_equal && hits == before && hits + generated == total &&
                  a.size() == 2 * total;
  return {ok, fmt::format("killed with {} of {} cached (rc {}); resume rc {} with {} hits + {} "
                          "generated; cache {} files vs uninterrupted: {}; manifests {}",
                          before, total, rc_kill, rc_resume, hits, generated, b.size(),
                          diff_summary(a, b), manifests_equal ? "identical" : "differ")};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  unsetenv(pipeline::kCacheEnv);  // every cache location below is explicit
  g_root = fs::temp_directory_path() / fmt::format("synthaug-acceptance-{}", getpid());
  fs::create_directories(g_root);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"count laws", count_laws},
      {"long-tail law", long_tail_law},
      {"prompt template golden", prompt_golden},
      {"determinism", determinism},
      {"metric oracles", metric_oracles},
      {"scheduler conformance", scheduler},
      {"few-shot synthetic gain", few_shot_gain},
      {"holdout law", holdout_law},
      {"idempotent resume", idempotent_resume},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, fmt::format("exception: {}", e.what())};
    }
    failed += !o.pass;
    fmt::print("{} {} {}: {}\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail);
    std::fflush(stdout);
  }
  std::error_code ec;
  fs::remove_all(g_root, ec);
  fmt::print("{} of {} criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
