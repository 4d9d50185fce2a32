#include "grda/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include <json.hpp>

#include "grda/errors.hpp"
#include "grda/rng.hpp"
#include "grda/tensor_io.hpp"

namespace grda {

using nlohmann::json;

Tensor preprocess(const RawImage& raw, std::size_t size) {
  if (raw.channels != 1 && raw.channels != 3) {
    throw InputError("preprocess: expected 1 or 3 channels, got " + std::to_string(raw.channels));
  }
  if (raw.pixels.size() != raw.height * raw.width * raw.channels) {
    throw InputError("preprocess: pixel buffer does not match image extents");
  }
  if (size == 0) throw InputError("preprocess: target size must be positive");
  const std::size_t crop = std::min(raw.height, raw.width);
  if (crop < size) {
    throw InputError("preprocess: " + std::to_string(raw.height) + "x" + std::to_string(raw.width) +
                     " image is smaller than the " + std::to_string(size) + "x" +
                     std::to_string(size) + " crop");
  }

  // Grayscale of the centred square crop.
  const std::size_t top = (raw.height - crop) / 2;
  const std::size_t left = (raw.width - crop) / 2;
  std::vector<double> gray(crop * crop);
  for (std::size_t y = 0; y < crop; ++y) {
    for (std::size_t x = 0; x < crop; ++x) {
      const std::uint8_t* px = &raw.pixels[((top + y) * raw.width + left + x) * raw.channels];
      double s = 0.0;
      for (std::size_t c = 0; c < raw.channels; ++c) s += px[c];
      gray[y * crop + x] = s / static_cast<double>(raw.channels);
    }
  }

  // Bilinear rescale with pixel-centre alignment.
  const double ratio = static_cast<double>(crop) / static_cast<double>(size);
  auto source = [&](std::size_t dst, std::size_t& i0, std::size_t& i1, double& frac) {
    double pos = (static_cast<double>(dst) + 0.5) * ratio - 0.5;
    pos = std::clamp(pos, 0.0, static_cast<double>(crop - 1));
    i0 = static_cast<std::size_t>(std::floor(pos));
    i1 = std::min(i0 + 1, crop - 1);
    frac = pos - static_cast<double>(i0);
  };
  Tensor out({1, size, size});
  for (std::size_t y = 0; y < size; ++y) {
    std::size_t y0, y1;
    double fy;
    source(y, y0, y1, fy);
    for (std::size_t x = 0; x < size; ++x) {
      std::size_t x0, x1;
      double fx;
      source(x, x0, x1, fx);
      const double top_row = gray[y0 * crop + x0] * (1.0 - fx) + gray[y0 * crop + x1] * fx;
      const double bottom_row = gray[y1 * crop + x0] * (1.0 - fx) + gray[y1 * crop + x1] * fx;
      const double v = top_row * (1.0 - fy) + bottom_row * fy;
      out[y * size + x] = std::clamp(2.0 * v / 255.0 - 1.0, -1.0, 1.0);
    }
  }
  return out;
}

const std::vector<std::size_t>& DomainDataset::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  throw ContractError("unknown split '" + name + "' (expected train or val)");
}

std::vector<DomainShift> shift_preset(const std::string& name, std::size_t num_domains) {
  std::vector<DomainShift> base{
      {1.0, 0.0, 0.0, 30.0, 0.0},
      {-0.9, 0.0, 0.12, 40.0, 25.0},
      {0.55, 60.0, -0.18, 90.0, -15.0},
      {1.1, -25.0, 0.25, 10.0, 10.0},
  };
  std::vector<DomainShift> out;
  if (name == "identity") {
    out.assign(num_domains, base[0]);
  } else if (name == "default") {
    for (std::size_t d = 0; d < num_domains; ++d) {
      if (d < base.size()) {
        out.push_back(base[d]);
        continue;
      }
      const double k = static_cast<double>(d);
      out.push_back({(d % 2 ? -1.0 : 1.0) * (0.6 + 0.1 * static_cast<double>(d % 5)),
                     20.0 * std::sin(k), 0.2 * std::cos(1.7 * k), 20.0 + 10.0 * static_cast<double>(d % 7),
                     5.0 * static_cast<double>(d % 3)});
    }
  } else {
    throw ConfigError("unknown shift preset '" + name + "' (expected default or identity)");
  }
  return out;
}

std::size_t GeneratorConfig::per_class_for(std::size_t domain) const {
  return per_class.size() == 1 ? per_class[0] : per_class.at(domain);
}

void GeneratorConfig::validate() const {
  if (num_domains < 2) throw ConfigError("at least two domains are required");
  if (num_classes < 2) throw ConfigError("at least two classes are required");
  if (per_class.size() != 1 && per_class.size() != num_domains) {
    throw ConfigError("per_class needs one entry or one per domain (" +
                      std::to_string(num_domains) + "), got " + std::to_string(per_class.size()));
  }
  for (std::size_t c : per_class) {
    if (c < 4) throw ConfigError("per_class must be at least 4, got " + std::to_string(c));
  }
  if (image_size < 4) throw ConfigError("image_size must be at least 4");
  shift_preset(shift, num_domains);
}

namespace {

double smooth_inside(double distance_outside) {
  return std::clamp(0.5 - distance_outside, 0.0, 1.0);
}

RawImage draw_glyph(std::size_t class_label, std::size_t num_classes, const DomainShift& shift,
                    std::size_t image_size, Engine& engine) {
  std::normal_distribution<double> jitter(0.0, 1.0);
  std::uniform_real_distribution<double> offset(-1.0, 1.0);
  RawImage img;
  img.height = image_size + image_size / 4;
  img.width = image_size + image_size / 2;
  img.channels = 3;
  img.pixels.resize(img.height * img.width * 3);

  const double h = static_cast<double>(img.height);
  const double angle = static_cast<double>(class_label) * std::numbers::pi /
                           static_cast<double>(num_classes) +
                       shift.rotation + 0.03 * jitter(engine);
  const double cx = 0.5 * static_cast<double>(img.width) + 0.05 * h * offset(engine);
  const double cy = 0.5 * h + 0.05 * h * offset(engine);
  const double half_len = 0.36 * h * (1.0 + 0.05 * jitter(engine));
  const double half_width = 0.07 * h * (1.0 + 0.1 * jitter(engine));
  const double blob = 0.12 * h;
  const double ux = std::cos(angle), uy = std::sin(angle);
  constexpr double kForeground = 220.0;
  std::normal_distribution<double> noise(0.0, 10.0);

  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      const double px = static_cast<double>(x) + 0.5 - cx;
      const double py = static_cast<double>(y) + 0.5 - cy;
      const double along = px * ux + py * uy;
      const double across = -px * uy + py * ux;
      const double bar = std::min(smooth_inside(std::abs(across) - half_width),
                                  smooth_inside(std::abs(along) - half_len));
      const double disc = 0.6 * smooth_inside(std::hypot(px, py) - blob);
      const double coverage = std::max(bar, disc);
      double v = shift.background + (kForeground - shift.background) * coverage;
      v = shift.contrast * (v - 128.0) + 128.0 + shift.brightness + noise(engine);
      std::uint8_t* out = &img.pixels[(y * img.width + x) * 3];
      const double channel[3] = {v + shift.tint, v, v - shift.tint};
      for (int c = 0; c < 3; ++c) {
        out[c] = static_cast<std::uint8_t>(std::lround(std::clamp(channel[c], 0.0, 255.0)));
      }
    }
  }
  return img;
}

}  // namespace

void assign_split(DomainDataset& dataset, std::uint64_t seed) {
  Engine engine(seed);
  int max_label = -1;
  for (const auto& s : dataset.samples) max_label = std::max(max_label, s.class_label);
  dataset.train.clear();
  dataset.val.clear();
  for (int k = 0; k <= max_label; ++k) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
      if (dataset.samples[i].class_label == k) members.push_back(i);
    }
    std::shuffle(members.begin(), members.end(), engine);
    const std::size_t n_val = (members.size() + 2) / 5;
    dataset.val.insert(dataset.val.end(), members.begin(), members.begin() + n_val);
    dataset.train.insert(dataset.train.end(), members.begin() + n_val, members.end());
  }
  std::sort(dataset.train.begin(), dataset.train.end());
  std::sort(dataset.val.begin(), dataset.val.end());
}

std::vector<DomainDataset> generate_synthetic(const GeneratorConfig& config) {
  config.validate();
  return generate_synthetic(config, shift_preset(config.shift, config.num_domains));
}

std::vector<DomainDataset> generate_synthetic(const GeneratorConfig& config,
                                              std::span<const DomainShift> shifts) {
  config.validate();
  if (shifts.size() != config.num_domains) {
    throw ConfigError("need one shift per domain (" + std::to_string(config.num_domains) + "), got " +
                      std::to_string(shifts.size()));
  }
  const std::uint64_t data_seed = derive_seed(config.seed, "data");
  std::vector<DomainDataset> out;
  for (std::size_t d = 0; d < config.num_domains; ++d) {
    DomainDataset ds;
    ds.domain_label = static_cast<int>(d);
    ds.image_size = config.image_size;
    Engine engine(derive_seed(data_seed, "domain/" + std::to_string(d)));
    const std::size_t per_class = config.per_class_for(d);
    for (std::size_t k = 0; k < config.num_classes; ++k) {
      for (std::size_t i = 0; i < per_class; ++i) {
        RawImage raw = draw_glyph(k, config.num_classes, shifts[d], config.image_size, engine);
        ds.samples.push_back({preprocess(raw, config.image_size), static_cast<int>(k),
                              static_cast<int>(d)});
      }
    }
    assign_split(ds, derive_seed(data_seed, "split/" + std::to_string(d)));
    out.push_back(std::move(ds));
  }
  return out;
}

std::size_t steps_per_epoch(std::span<const DomainDataset> datasets, std::size_t m) {
  if (m == 0) throw ContractError("per-domain batch size must be at least 1");
  std::size_t longest = 0;
  for (const auto& ds : datasets) longest = std::max(longest, ds.train.size());
  return (longest + m - 1) / m;
}

Tensor stack_images(const DomainDataset& dataset, std::span<const std::size_t> indices) {
  const std::size_t s = dataset.image_size;
  const std::size_t plane = s * s;
  if (indices.empty()) throw DataError("stack_images: no samples selected");
  Tensor out({indices.size(), 1, s, s});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Tensor& img = dataset.samples.at(indices[i]).image;
    std::copy(img.data().begin(), img.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * plane));
  }
  return out;
}

std::vector<AggregatedBatch> make_epoch(std::span<const DomainDataset> datasets, std::size_t m,
                                        std::uint64_t seed, std::span<const int> source_domains) {
  if (m == 0) throw ContractError("per-domain batch size must be at least 1");
  if (datasets.empty()) throw DataError("make_epoch: no datasets");
  const std::size_t s = datasets[0].image_size;
  for (const auto& ds : datasets) {
    if (ds.train.empty()) {
      throw DataError("domain " + std::to_string(ds.domain_label) + " has an empty train split");
    }
    if (ds.image_size != s) throw DataError("datasets disagree on image size");
  }
  const std::size_t steps = steps_per_epoch(datasets, m);
  const std::size_t D = datasets.size();

  // Fix the complete sample order before materialising any batch.
  std::vector<std::vector<std::size_t>> streams(D);
  for (std::size_t j = 0; j < D; ++j) {
    const auto& train = datasets[j].train;
    Engine engine(derive_seed(seed, "domain/" + std::to_string(datasets[j].domain_label)));
    std::vector<std::size_t> order = train;
    std::size_t cursor = order.size();
    streams[j].reserve(steps * m);
    while (streams[j].size() < steps * m) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), engine);
        cursor = 0;
      }
      streams[j].push_back(order[cursor++]);
    }
  }

  std::vector<AggregatedBatch> epoch;
  epoch.reserve(steps);
  const std::size_t plane = s * s;
  for (std::size_t step = 0; step < steps; ++step) {
    AggregatedBatch batch;
    batch.per_domain = m;
    batch.images = Tensor({D * m, 1, s, s});
    std::size_t row = 0;
    for (std::size_t j = 0; j < D; ++j) {
      const bool labeled = std::find(source_domains.begin(), source_domains.end(),
                                     datasets[j].domain_label) != source_domains.end();
      for (std::size_t i = 0; i < m; ++i, ++row) {
        const std::size_t idx = streams[j][step * m + i];
        const Sample& sample = datasets[j].samples[idx];
        std::copy(sample.image.data().begin(), sample.image.data().end(),
                  batch.images.data().begin() + static_cast<std::ptrdiff_t>(row * plane));
        batch.class_labels.push_back(sample.class_label);
        batch.domain_labels.push_back(datasets[j].domain_label);
        batch.source_mask.push_back(labeled ? 1 : 0);
        batch.refs.push_back({j, idx});
      }
    }
    epoch.push_back(std::move(batch));
  }
  return epoch;
}

namespace {

json shift_json(const DomainShift& s) {
  return {{"contrast", s.contrast}, {"brightness", s.brightness}, {"rotation", s.rotation},
          {"background", s.background}, {"tint", s.tint}};
}

std::vector<double> as_doubles(const std::vector<std::size_t>& v) {
  return {v.begin(), v.end()};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw InputError("cannot open " + path.string() + " for writing");
  f << text;
}

std::string domain_dir_name(int label) { return "domain_" + std::to_string(label); }

}  // namespace

void save_datasets(const std::filesystem::path& dir, const std::vector<DomainDataset>& datasets,
                   const GeneratorConfig& config) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const auto shifts = shift_preset(config.shift, config.num_domains);
  json top = {{"format", "grda-dataset"},
              {"format_version", kTensorFormatVersion},
              {"num_domains", datasets.size()},
              {"num_classes", config.num_classes},
              {"image_size", config.image_size},
              {"per_class", config.per_class},
              {"seed", config.seed},
              {"shift", config.shift},
              {"domains", json::array()}};
  for (const auto& ds : datasets) {
    const fs::path sub = dir / domain_dir_name(ds.domain_label);
    fs::create_directories(sub);
    const std::size_t n = ds.samples.size();
    const std::size_t s = ds.image_size;
    Tensor images({n, 1, s, s});
    Tensor classes({n});
    Tensor domains({n});
    std::vector<std::size_t> class_counts(config.num_classes, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& smp = ds.samples[i];
      std::copy(smp.image.data().begin(), smp.image.data().end(),
                images.data().begin() + static_cast<std::ptrdiff_t>(i * s * s));
      classes[i] = smp.class_label;
      domains[i] = smp.domain_label;
      class_counts.at(static_cast<std::size_t>(smp.class_label))++;
    }
    std::vector<NamedTensor> tensors{
        {"images", std::move(images)},
        {"class_labels", std::move(classes)},
        {"domain_labels", std::move(domains)},
        {"train_index", Tensor({std::max<std::size_t>(ds.train.size(), 1)},
                               ds.train.empty() ? std::vector<double>{-1.0} : as_doubles(ds.train))},
        {"val_index", Tensor({std::max<std::size_t>(ds.val.size(), 1)},
                             ds.val.empty() ? std::vector<double>{-1.0} : as_doubles(ds.val))},
    };
    write_tensor_file(sub / "samples.grda", tensors);

    std::vector<int> labels(config.num_classes);
    for (std::size_t k = 0; k < labels.size(); ++k) labels[k] = static_cast<int>(k);
    json meta = {{"domain_label", ds.domain_label},
                 {"image_size", s},
                 {"counts", {{"total", n}, {"train", ds.train.size()}, {"val", ds.val.size()},
                             {"per_class", class_counts}}},
                 {"class_labels", labels},
                 {"seed", config.seed},
                 {"shift", {{"preset", config.shift},
                            {"params", shift_json(shifts.at(static_cast<std::size_t>(ds.domain_label)))}}},
                 {"samples", "samples.grda"}};
    write_text(sub / "meta.json", meta.dump(2) + "\n");
    top["domains"].push_back(domain_dir_name(ds.domain_label));
  }
  write_text(dir / "meta.json", top.dump(2) + "\n");
}

namespace {

std::vector<std::size_t> read_index(const Tensor& t, std::size_t n, const std::string& what) {
  std::vector<std::size_t> out;
  if (t.size() == 1 && t[0] == -1.0) return out;
  for (double v : t.data()) {
    if (v < 0 || v >= static_cast<double>(n) || v != std::floor(v)) {
      throw DataError("invalid " + what + " entry " + std::to_string(v));
    }
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

}  // namespace

std::vector<DomainDataset> load_datasets(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const fs::path meta_path = dir / "meta.json";
  std::ifstream f(meta_path);
  if (!f) throw DataError("no dataset at " + dir.string() + " (missing meta.json)");
  json top;
  try {
    top = json::parse(f);
  } catch (const json::exception& e) {
    throw DataError("malformed " + meta_path.string() + ": " + e.what());
  }
  std::vector<DomainDataset> out;
  for (const auto& name : top.at("domains")) {
    const fs::path sub = dir / name.get<std::string>();
    std::ifstream mf(sub / "meta.json");
    if (!mf) throw DataError("missing " + (sub / "meta.json").string());
    const json meta = json::parse(mf);
    const auto tensors = read_tensor_file(sub / meta.at("samples").get<std::string>());
    const Tensor& images = find_tensor(tensors, "images");
    const Tensor& classes = find_tensor(tensors, "class_labels");
    const Tensor& domains = find_tensor(tensors, "domain_labels");
    if (images.rank() != 4 || images.dim(1) != 1 || images.dim(2) != images.dim(3)) {
      throw DataError("images in " + sub.string() + " have shape " + shape_str(images.shape()));
    }
    const std::size_t n = images.dim(0), s = images.dim(2);
    if (classes.size() != n || domains.size() != n) {
      throw DataError("label count does not match image count in " + sub.string());
    }
    DomainDataset ds;
    ds.domain_label = meta.at("domain_label").get<int>();
    ds.image_size = s;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> px(images.data().begin() + static_cast<std::ptrdiff_t>(i * s * s),
                             images.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * s * s));
      ds.samples.push_back({Tensor({1, s, s}, std::move(px)), static_cast<int>(classes[i]),
                            static_cast<int>(domains[i])});
    }
    ds.train = read_index(find_tensor(tensors, "train_index"), n, "train_index");
    ds.val = read_index(find_tensor(tensors, "val_index"), n, "val_index");
    out.push_back(std::move(ds));
  }
  if (out.empty()) throw DataError("dataset at " + dir.string() + " has no domains");
  return out;
}

}  // namespace grda
