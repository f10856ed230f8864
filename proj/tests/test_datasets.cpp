// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <set>
#include <sstream>

#include <fmt/format.h>

#include "synthaug/datasets.hpp"
#include "test_util.hpp"

using namespace synthaug;
using namespace synthaug::datasets;

namespace {

// n classes of m real images with fake paths.
Dataset toy(std::size_t n, std::size_t m, const std::string& root = "/data") {
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < n; ++i) labels.push_back("class" + std::to_string(i));
  Dataset ds = make_dataset("toy", labels, {32, 32, 3});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      ds.categories[i].real_images.push_back(
          {fmt::format("{}/c{}/img{:04d}.png", root, i, j), Provenance::real, Split::train});
    }
  }
  return ds;
}

ImageProvider fake_provider(std::size_t extra = 0) {
  return [extra](const Category& cat, std::size_t count, const AugmentationPlan& plan) {
    std::vector<imagegen::SyntheticImage> out;
    for (std::size_t j = 0; j < count + extra; ++j) {
      imagegen::SyntheticImage s;
      s.class_id = cat.label.class_id;
      s.index = static_cast<int>(j) + 1;
      s.seed = plan.seed + j + 1;
      s.path = fmt::format("/cache/c{}/syn{:04d}.ppm", cat.label.class_id, j);
      out.push_back(std::move(s));
    }
    return out;
  };
}

std::set<std::string> paths(const std::vector<ImageRef>& refs) {
  std::set<std::string> s;
  for (const auto& r : refs) s.insert(r.path);
  return s;
}

}  // namespace

TEST_CASE("augment_category appends and checks class ids") {
  Dataset ds = toy(2, 500);
  std::vector<imagegen::SyntheticImage> syn(500);
  for (std::size_t j = 0; j < syn.size(); ++j) {
    syn[j].class_id = 1;
    syn[j].path = "/s/" + std::to_string(j);
  }
  const auto cat = augment_category(ds.categories[1], syn);
  CHECK(cat.real_images == ds.categories[1].real_images);
  CHECK(cat.synthetic_images.size() == 500);
  CHECK(cat.synthetic_images[0].provenance == Provenance::synthetic);
  CHECK(augment_category(ds.categories[1], {}) == ds.categories[1]);
  syn[7].class_id = 0;
  try {
    augment_category(ds.categories[1], syn);
    FAIL("expected an error");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("synthetic image 7") != std::string::npos);
  }
}

TEST_CASE("count law for every ratio") {
  const Dataset ds = toy(2, 50);
  for (double ratio : {0.2, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0}) {
    AugmentationPlan plan;
    plan.ratio = ratio;
    const auto aug = build_augmented_dataset(ds, plan, fake_provider());
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(aug.categories[i].synthetic_images.size() == round_half_up(ratio * 50));
      CHECK(aug.categories[i].real_images == ds.categories[i].real_images);
    }
  }
  AugmentationPlan zero;
  zero.ratio = 0.0;
  CHECK(build_augmented_dataset(ds, zero, fake_provider()) == ds);
  AugmentationPlan neg;
  neg.ratio = -0.5;
  CHECK_THROWS_AS(neg.validate(), InputError);
}

TEST_CASE("a CIFAR-100-shaped dataset at ratio 1 gains 50000 synthetic images") {
  const Dataset ds = toy(100, 500);
  AugmentationPlan plan;
  const auto aug = build_augmented_dataset(ds, plan, fake_provider());
  CHECK(aug.count(Provenance::synthetic) == 50000);
  CHECK(aug.count(Provenance::real) == 50000);
  AugmentationPlan small;
  small.ratio = 0.2;
  CHECK(small.synthetic_count(500) == 100);
}

TEST_CASE("provider shortfall lists every category deficit; surplus is cut") {
  const Dataset ds = toy(3, 10);
  AugmentationPlan plan;
  const ImageProvider short_by_two = [](const Category& cat, std::size_t count,
                                        const AugmentationPlan& p) {
    auto all = fake_provider()(cat, count, p);
    if (cat.label.class_id != 1) all.resize(count - 2);
    return all;
  };
  try {
    build_augmented_dataset(ds, plan, short_by_two);
    FAIL("expected an error");
  } catch (const InputError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("'class0'") != std::string::npos);
    CHECK(msg.find("'class2'") != std::string::npos);
    CHECK(msg.find("'class1'") == std::string::npos);
  }
  const auto aug = build_augmented_dataset(ds, plan, fake_provider(3));
  CHECK(aug.categories[0].synthetic_images.size() == 10);
}

TEST_CASE("long-tail law") {
  SUBCASE("n=100, m=500 keeps 5i") {
    const auto lt = make_long_tail(toy(100, 500), 1);
    for (std::size_t i = 1; i <= 100; ++i) CHECK(lt.categories[i - 1].real_images.size() == 5 * i);
  }
  SUBCASE("n=4, m=10") {
    const auto lt = make_long_tail(toy(4, 10), 1);
    std::vector<std::size_t> sizes;
    for (const auto& c : lt.categories) sizes.push_back(c.real_images.size());
    CHECK(sizes == std::vector<std::size_t>{2, 5, 7, 10});
  }
  SUBCASE("n=3, m=1 clamps at one") {
    const auto lt = make_long_tail(toy(3, 1), 1);
    for (const auto& c : lt.categories) CHECK(c.real_images.size() == 1);
  }
  SUBCASE("general formula, subset, determinism, monotone") {
    for (std::size_t n : {1, 2, 3, 7, 13}) {
      for (std::size_t m : {1, 2, 5, 9, 40}) {
        const Dataset ds = toy(n, m);
        const auto lt = make_long_tail(ds, 9);
        CHECK(make_long_tail(ds, 9) == lt);
        for (std::size_t i = 1; i <= n; ++i) {
          const std::size_t want = std::max<std::size_t>(1, (i * m) / n);
          const auto& got = lt.categories[i - 1].real_images;
          CHECK(got.size() == want);
          CHECK(paths(got).size() == got.size());
          for (const auto& p : paths(got)) CHECK(paths(ds.categories[i - 1].real_images).count(p));
          if (i > 1) CHECK(got.size() >= lt.categories[i - 2].real_images.size());
        }
      }
    }
  }
}

TEST_CASE("few-shot sampling") {
  const Dataset ds = toy(100, 20);
  const auto fs10 = make_few_shot(ds, 10, 3);
  CHECK(fs10.total_images() == 1000);
  CHECK(make_few_shot(ds, 10, 3) == fs10);
  CHECK_FALSE(make_few_shot(ds, 10, 4) == fs10);
  CHECK(make_few_shot(ds, 20, 3) == ds);
  CHECK_THROWS_AS(make_few_shot(ds, 21, 3), InputError);
  CHECK_THROWS_AS(make_few_shot(ds, 0, 3), InputError);
}

TEST_CASE("adversarial injection") {
  const Dataset ds = toy(5, 10);
  std::map<int, std::vector<std::string>> adv;
  for (int k = 0; k < 10; ++k) adv[3].push_back("/adv/" + std::to_string(k) + ".png");
  const auto out = inject_adversarial(ds, adv);
  CHECK(out.categories[3].adversarial_images.size() == 10);
  CHECK(out.categories[3].adversarial_images[0].provenance == Provenance::adversarial);
  CHECK(out.count(Provenance::adversarial) == 10);
  CHECK(inject_adversarial(ds, {}) == ds);
  CHECK_THROWS_AS(inject_adversarial(ds, {{7, {"/x.png"}}}), InputError);

  const auto [train, val] = split_holdout(out, 0.2, 1);
  CHECK(val.count(Provenance::adversarial) == 0);
  CHECK(train.categories[3].adversarial_images.size() == 10);
}

TEST_CASE("holdout law") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    AugmentationPlan plan;
    plan.ratio = 1.0;
    const Dataset ds = build_augmented_dataset(toy(2, 500), plan, fake_provider());
    const auto [train, val] = split_holdout(ds, 0.2, seed);
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(train.categories[i].real_images.size() == 400);
      CHECK(val.categories[i].real_images.size() == 100);
      CHECK(val.categories[i].synthetic_images.empty());
      CHECK(val.categories[i].adversarial_images.empty());
      CHECK(train.categories[i].synthetic_images.size() == 500);
      auto t = paths(train.categories[i].real_images);
      const auto v = paths(val.categories[i].real_images);
      for (const auto& p : v) CHECK(t.count(p) == 0);
      t.insert(v.begin(), v.end());
      CHECK(t == paths(ds.categories[i].real_images));
      for (const auto& r : val.categories[i].real_images) CHECK(r.split == Split::val);
    }
  }
  const auto [t5, v5] = split_holdout(toy(1, 5), 0.2, 1);
  CHECK(t5.categories[0].real_images.size() == 4);
  CHECK(v5.categories[0].real_images.size() == 1);
  CHECK_THROWS_AS(split_holdout(toy(2, 1), 0.2, 1), InputError);
  CHECK_THROWS_AS(split_holdout(toy(2, 5), 1.0, 1), InputError);
  CHECK(split_holdout(toy(2, 50), 0.2, 4).second == split_holdout(toy(2, 50), 0.2, 4).second);
}

TEST_CASE("transform baseline") {
  Image img(6, 4);
  Rng rng(2);
  for (auto& b : img.bytes()) b = static_cast<std::uint8_t>(rng.uniform_index(256));
  const std::vector<TransformOp> flip2{TransformOp::hflip, TransformOp::hflip};
  CHECK(transform_augment(img, flip2) == img);
  const std::vector<TransformOp> rot4(4, TransformOp::rotate90);
  CHECK(transform_augment(img, rot4) == img);
  const std::vector<TransformOp> rot1{TransformOp::rotate90};
  CHECK(transform_augment(img, rot1).spec() == ImageSpec{4, 6, 3});
  const std::vector<TransformOp> crop{TransformOp::crop_pad4};
  CHECK(transform_augment(img, crop, 5).spec() == img.spec());
  CHECK(transform_augment(img, crop, 5) == transform_augment(img, crop, 5));
  const std::vector<TransformOp> flip{TransformOp::hflip};
  CHECK(transform_augment(img, flip).at(0, 0, 0) == img.at(0, 5, 0));
  CHECK(parse_transform_op("crop_pad4") == TransformOp::crop_pad4);
}

TEST_CASE("manifest round trip, stability and dangling paths") {
  testutil::TempDir dir("manifest");
  Dataset ds = toy(3, 4, (dir / "img").string());
  ds.domain = "Art";
  ds.categories[1].synthetic_images.push_back(
      {(dir / "cache" / "s1.ppm").string(), Provenance::synthetic, Split::train});
  ds.categories[2].adversarial_images.push_back(
      {(dir / "adv" / "a.png").string(), Provenance::adversarial, Split::train});
  ds.categories[0].real_images[1].split = Split::val;
  ds = canonicalize(ds);
  for (const auto& c : ds.categories) {
    for (const auto* list : {&c.real_images, &c.synthetic_images, &c.adversarial_images}) {
      for (const auto& r : *list) write_image(r.path, Image(2, 2));
    }
  }
  save_manifest(ds, dir / "m" / "train.jsonl");
  const auto text = testutil::read_text(dir / "m" / "train.jsonl");
  CHECK(text.find(dir.path().string()) == std::string::npos);  // stored relative
  const auto back = load_manifest(dir / "m" / "train.jsonl");
  CHECK(back == ds);
  save_manifest(back, dir / "m" / "again.jsonl");
  CHECK(testutil::read_text(dir / "m" / "again.jsonl") == text);
  CHECK(manifest_digest(back) == manifest_digest(ds));

  std::filesystem::remove(ds.categories[2].real_images[3].path);
  try {
    load_manifest(dir / "m" / "train.jsonl");
    FAIL("expected an error");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("img0003.png") != std::string::npos);
  }
  CHECK_NOTHROW(load_manifest(dir / "m" / "train.jsonl", false));
}

TEST_CASE("manifest records are in canonical order") {
  Dataset ds = toy(2, 3);
  ds.categories[0].real_images[0].split = Split::val;
  const auto text = serialize_manifest(canonicalize(ds), "/");
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);  // header
  std::vector<std::tuple<int, int, int, std::string>> keys;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    keys.emplace_back(static_cast<int>(parse_split(j["split"].get<std::string>())),
                      j["class_id"].get<int>(),
                      static_cast<int>(parse_provenance(j["provenance"].get<std::string>())),
                      j["path"].get<std::string>());
    CHECK(j.contains("label_text"));
    CHECK(j.contains("domain"));
  }
  CHECK(keys.size() == 6);
  CHECK(std::is_sorted(keys.begin(), keys.end()));
  CHECK(std::get<0>(keys.back()) == static_cast<int>(Split::val));
}

TEST_CASE("stats row") {
  Dataset ds = toy(100, 500);
  CHECK(stats_csv_header() == "# total,# class,# per class,real,synthetic,adversarial");
  CHECK(stats_csv_row(stats(ds)) == "50000,100,500,50000,0,0");
  CHECK(stats_csv_row(stats(make_long_tail(toy(4, 10), 1))) == "24,4,2-10,24,0,0");
}

TEST_CASE("dataset validation") {
  Dataset ds = toy(2, 2);
  CHECK_NOTHROW(ds.validate());
  ds.categories[1].label.class_id = 5;
  CHECK_THROWS_AS(ds.validate(), InputError);
  ds = toy(2, 2);
  ds.categories[1].label.label_text = "class0";
  CHECK_THROWS_AS(ds.validate(), InputError);
}

TEST_CASE("load_image scales down and refuses smaller images") {
  testutil::TempDir dir("load");
  write_image(dir / "big.png", Image(64, 64, 9));
  const auto img = load_image({(dir / "big.png").string(), Provenance::real, Split::train}, {32, 32, 3});
  CHECK(img.spec() == ImageSpec{32, 32, 3});
  CHECK(img.at(5, 5, 1) == 9);
  write_image(dir / "small.png", Image(16, 16, 9));
  CHECK_THROWS_AS(load_image({(dir / "small.png").string(), Provenance::real, Split::train},
                             {32, 32, 3}),
                  InputError);
}
