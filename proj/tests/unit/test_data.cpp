#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <random>
#include <set>

#include "grda/data.hpp"
#include "grda/errors.hpp"

using namespace grda;

namespace {

RawImage uniform(std::size_t h, std::size_t w, std::size_t c, std::uint8_t v) {
  return {h, w, c, std::vector<std::uint8_t>(h * w * c, v)};
}

// A dataset whose train split holds `n` samples with distinct pixel values.
DomainDataset toy_domain(int label, std::size_t n) {
  DomainDataset ds;
  ds.domain_label = label;
  ds.image_size = 2;
  for (std::size_t i = 0; i < n; ++i) {
    ds.samples.push_back({Tensor::full({1, 2, 2}, static_cast<double>(i)), static_cast<int>(i % 7), label});
    ds.train.push_back(i);
  }
  return ds;
}

std::vector<DomainDataset> toy_domains(std::initializer_list<std::size_t> sizes) {
  std::vector<DomainDataset> out;
  int label = 0;
  for (std::size_t n : sizes) out.push_back(toy_domain(label++, n));
  return out;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("grda_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("preprocess") {
  SUBCASE("mid-gray") {
    const Tensor t = preprocess(uniform(40, 50, 3, 128), 16);
    CHECK(t.shape() == Shape{1, 16, 16});
    for (double v : t.data()) CHECK(std::abs(v - (2.0 * 128.0 / 255.0 - 1.0)) <= 1e-12);
    CHECK(std::abs(t[0] - 0.00392) < 1e-5);
  }
  SUBCASE("white and black are the range endpoints") {
    const Tensor white = preprocess(uniform(20, 20, 1, 255), 8);
    const Tensor black = preprocess(uniform(20, 20, 1, 0), 8);
    for (double v : white.data()) CHECK(v == 1.0);
    for (double v : black.data()) CHECK(v == -1.0);
  }
  SUBCASE("square input at target size is only normalised") {
    std::mt19937_64 rng(1);
    RawImage raw{6, 6, 1, {}};
    for (int i = 0; i < 36; ++i) raw.pixels.push_back(static_cast<std::uint8_t>(rng() % 256));
    const Tensor t = preprocess(raw, 6);
    for (std::size_t i = 0; i < 36; ++i) {
      CHECK(std::abs(t[i] - (2.0 * raw.pixels[i] / 255.0 - 1.0)) <= 1e-12);
    }
  }
  SUBCASE("channel average and centre crop") {
    // 2 x 4 colour image; the centre crop keeps columns 1 and 2.
    RawImage raw{2, 4, 3, {}};
    for (int i = 0; i < 8; ++i) {
      const int v = i * 30;
      raw.pixels.insert(raw.pixels.end(), {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v + 3),
                                           static_cast<std::uint8_t>(v + 9)});
    }
    const Tensor t = preprocess(raw, 2);
    const int kept[] = {1, 2, 5, 6};
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(std::abs(t[i] - (2.0 * (kept[i] * 30 + 4) / 255.0 - 1.0)) <= 1e-12);
    }
  }
  SUBCASE("too small") {
    CHECK_THROWS_AS(preprocess(uniform(10, 30, 1, 1), 16), InputError);
  }
  SUBCASE("output range on random images") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 20; ++trial) {
      RawImage raw{17 + rng() % 20, 17 + rng() % 20, 3, {}};
      raw.pixels.resize(raw.height * raw.width * 3);
      for (auto& p : raw.pixels) p = static_cast<std::uint8_t>(rng() % 256);
      const Tensor t = preprocess(raw, 16);
      CHECK(t.shape() == Shape{1, 16, 16});
      for (double v : t.data()) CHECK((v >= -1.0 && v <= 1.0));
    }
  }
}

TEST_CASE("generate_synthetic") {
  GeneratorConfig cfg;
  cfg.per_class = {20, 12, 8, 4};
  cfg.image_size = 16;
  cfg.seed = 5;
  const auto a = generate_synthetic(cfg);
  REQUIRE(a.size() == 4);
  const std::size_t expected[] = {140, 84, 56, 28};
  for (std::size_t d = 0; d < 4; ++d) {
    CHECK(a[d].samples.size() == expected[d]);
    CHECK(a[d].domain_label == static_cast<int>(d));
  }

  SUBCASE("deterministic per seed") {
    const auto b = generate_synthetic(cfg);
    for (std::size_t d = 0; d < 4; ++d) {
      CHECK(a[d].train == b[d].train);
      for (std::size_t i = 0; i < a[d].samples.size(); ++i) {
        CHECK(a[d].samples[i].image.identical(b[d].samples[i].image));
      }
    }
    cfg.seed = 6;
    const auto c = generate_synthetic(cfg);
    CHECK_FALSE(a[0].samples[0].image.identical(c[0].samples[0].image));
  }
  SUBCASE("samples are in range and labelled") {
    for (const auto& ds : a) {
      for (const auto& s : ds.samples) {
        CHECK(s.image.shape() == Shape{1, 16, 16});
        CHECK(s.domain_label == ds.domain_label);
        CHECK((s.class_label >= 0 && s.class_label < 7));
        for (double v : s.image.data()) CHECK((v >= -1.0 && v <= 1.0));
      }
    }
  }
  SUBCASE("split is disjoint, exhaustive and stratified") {
    for (const auto& ds : a) {
      std::set<std::size_t> all(ds.train.begin(), ds.train.end());
      for (std::size_t v : ds.val) CHECK(all.insert(v).second);
      CHECK(all.size() == ds.samples.size());
      std::map<int, std::size_t> count, val;
      for (const auto& s : ds.samples) ++count[s.class_label];
      for (std::size_t v : ds.val) ++val[ds.samples[v].class_label];
      for (const auto& [k, n] : count) {
        const double share = 0.2 * static_cast<double>(n);
        CHECK(val[k] >= static_cast<std::size_t>(std::floor(share)));
        CHECK(val[k] <= static_cast<std::size_t>(std::ceil(share)));
      }
    }
  }
  SUBCASE("identity shift makes domains share appearance statistics") {
    GeneratorConfig id = cfg;
    id.shift = "identity";
    id.per_class = {20};
    const auto shifts = shift_preset("identity", 4);
    for (const auto& s : shifts) {
      CHECK(s.contrast == shifts[0].contrast);
      CHECK(s.brightness == shifts[0].brightness);
      CHECK(s.rotation == shifts[0].rotation);
      CHECK(s.background == shifts[0].background);
      CHECK(s.tint == shifts[0].tint);
    }
    CHECK_NOTHROW(generate_synthetic(id));
  }
  SUBCASE("invalid counts") {
    GeneratorConfig bad = cfg;
    bad.per_class = {3};
    CHECK_THROWS_AS(generate_synthetic(bad), ConfigError);
    bad = cfg;
    bad.per_class = {20, 20};
    CHECK_THROWS_AS(generate_synthetic(bad), ConfigError);
    bad = cfg;
    bad.num_domains = 1;
    bad.per_class = {20};
    CHECK_THROWS_AS(generate_synthetic(bad), ConfigError);
    CHECK_THROWS_AS(shift_preset("sepia", 4), ConfigError);
  }
}

TEST_CASE("make_epoch") {
  SUBCASE("cycling over unequal domains") {
    const auto ds = toy_domains({12, 6, 4, 2});
    const std::vector<int> source{0};
    const auto epoch = make_epoch(ds, 2, 11, source);
    CHECK(steps_per_epoch(ds, 2) == 6);
    REQUIRE(epoch.size() == 6);
    std::map<std::pair<std::size_t, std::size_t>, int> uses;
    for (const auto& b : epoch) {
      CHECK(b.images.shape() == Shape{8, 1, 2, 2});
      CHECK(b.per_domain == 2);
      std::map<int, int> hist;
      std::size_t masked = 0;
      for (std::size_t i = 0; i < 8; ++i) {
        ++hist[b.domain_labels[i]];
        masked += b.source_mask[i];
        CHECK(b.source_mask[i] == (b.domain_labels[i] == 0));
        const auto& s = ds[b.refs[i].dataset].samples[b.refs[i].sample];
        CHECK(b.images[i * 4] == s.image[0]);
        CHECK(b.class_labels[i] == s.class_label);
        ++uses[{b.refs[i].dataset, b.refs[i].sample}];
      }
      CHECK(masked == 2);
      for (int d = 0; d < 4; ++d) CHECK(hist[d] == 2);
    }
    // Counting oracle: every sample of domain d is used 12 / |train_d| times.
    const int times[] = {1, 2, 3, 6};
    for (const auto& [key, n] : uses) CHECK(n == times[key.first]);
    CHECK(uses.size() == 24);
  }
  SUBCASE("equal sizes: each sample once") {
    const auto ds = toy_domains({8, 8, 8});
    const std::vector<int> source{1};
    const auto epoch = make_epoch(ds, 4, 3, source);
    REQUIRE(epoch.size() == 2);
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (const auto& b : epoch) {
      for (const auto& r : b.refs) CHECK(seen.insert({r.dataset, r.sample}).second);
    }
    CHECK(seen.size() == 24);
  }
  SUBCASE("single domain is plain shuffled batching") {
    const auto ds = toy_domains({10});
    const std::vector<int> source{0};
    const auto epoch = make_epoch(ds, 3, 8, source);
    REQUIRE(epoch.size() == 4);
    std::map<std::size_t, int> uses;
    for (const auto& b : epoch) {
      CHECK(b.refs.size() == 3);
      for (const auto& r : b.refs) ++uses[r.sample];
    }
    CHECK(uses.size() == 10);
  }
  SUBCASE("deterministic per seed and shuffled across seeds") {
    const auto ds = toy_domains({12, 6});
    const std::vector<int> source{0};
    auto order = [&](std::uint64_t seed) {
      std::vector<std::size_t> o;
      for (const auto& b : make_epoch(ds, 3, seed, source)) {
        for (const auto& r : b.refs) o.push_back(r.dataset * 100 + r.sample);
      }
      return o;
    };
    CHECK(order(1) == order(1));
    CHECK(order(1) != order(2));
  }
  SUBCASE("errors") {
    auto ds = toy_domains({4, 4});
    const std::vector<int> source{0};
    CHECK_THROWS_AS(make_epoch(ds, 0, 1, source), ContractError);
    ds[1].train.clear();
    CHECK_THROWS_AS(make_epoch(ds, 2, 1, source), DataError);
  }
}

TEST_CASE("dataset persistence") {
  GeneratorConfig cfg;
  cfg.per_class = {5, 4};
  cfg.num_domains = 2;
  cfg.image_size = 8;
  cfg.seed = 12;
  const auto ds = generate_synthetic(cfg);
  const auto dir = temp_dir("persist");
  save_datasets(dir, ds, cfg);
  CHECK(std::filesystem::exists(dir / "meta.json"));
  CHECK(std::filesystem::exists(dir / "domain_0" / "meta.json"));
  CHECK(std::filesystem::exists(dir / "domain_1" / "samples.grda"));
  const auto back = load_datasets(dir);
  REQUIRE(back.size() == 2);
  for (std::size_t d = 0; d < 2; ++d) {
    CHECK(back[d].domain_label == ds[d].domain_label);
    CHECK(back[d].image_size == 8);
    CHECK(back[d].train == ds[d].train);
    CHECK(back[d].val == ds[d].val);
    REQUIRE(back[d].samples.size() == ds[d].samples.size());
    for (std::size_t i = 0; i < ds[d].samples.size(); ++i) {
      CHECK(back[d].samples[i].image.identical(ds[d].samples[i].image));
      CHECK(back[d].samples[i].class_label == ds[d].samples[i].class_label);
    }
  }
  CHECK_THROWS_AS(load_datasets(temp_dir("missing")), DataError);
  std::filesystem::remove_all(dir);
}
