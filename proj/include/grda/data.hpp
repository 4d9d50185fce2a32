#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "grda/tensor.hpp"

namespace grda {

/// Raw 8-bit image, interleaved height x width x channels (1 or 3).
struct RawImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> pixels;
};

/// Grayscale by channel average, center square crop, bilinear rescale to
/// size x size, then the affine map [0,255] -> [-1,1]. Returns [1 x s x s].
/// Throws InputError when the crop is smaller than `size`.
Tensor preprocess(const RawImage& raw, std::size_t size);

struct Sample {
  Tensor image;  // [1 x s x s], values in [-1,1]
  int class_label = 0;
  int domain_label = 0;
};

struct DomainDataset {
  int domain_label = 0;
  std::size_t image_size = 0;
  std::vector<Sample> samples;
  std::vector<std::size_t> train;  // ascending sample indices
  std::vector<std::size_t> val;

  const std::vector<std::size_t>& split(const std::string& name) const;
};

/// Photometric and geometric appearance of one domain. Pixel values are
/// mapped as contrast * (v - 128) + 128 + brightness after the glyph is drawn
/// over a background of the given level; `rotation` offsets every glyph angle.
/// `tint` spreads the value across the colour channels without changing
/// their mean.
struct DomainShift {
  double contrast = 1.0;
  double brightness = 0.0;
  double rotation = 0.0;
  double background = 30.0;
  double tint = 0.0;
};

/// "default": every domain has its own shift. "identity": all domains share
/// domain 0's appearance, so they are indistinguishable.
std::vector<DomainShift> shift_preset(const std::string& name, std::size_t num_domains);

struct GeneratorConfig {
  std::size_t num_domains = 4;
  std::size_t num_classes = 7;
  std::vector<std::size_t> per_class{20};  // one entry, or one per domain
  std::size_t image_size = 32;
  std::string shift = "default";
  std::uint64_t seed = 0;

  std::size_t per_class_for(std::size_t domain) const;
  void validate() const;
};

/// Each class k is a bar at angle k*pi/K through the centre with a small
/// central blob, plus per-sample jitter and pixel noise. Samples pass through
/// preprocess(). Splits are 80/20, stratified per class.
std::vector<DomainDataset> generate_synthetic(const GeneratorConfig& config);
/// Same, with explicit per-domain shifts instead of config.shift.
std::vector<DomainDataset> generate_synthetic(const GeneratorConfig& config,
                                              std::span<const DomainShift> shifts);

/// Stratified 80/20 split: per class, round(count / 5) samples go to validation.
void assign_split(DomainDataset& dataset, std::uint64_t seed);

struct SampleRef {
  std::size_t dataset = 0;
  std::size_t sample = 0;
};

/// One training step's data: m samples from each domain, domain-major.
struct AggregatedBatch {
  Tensor images;  // [(D*m) x 1 x s x s]
  std::vector<int> class_labels;
  std::vector<int> domain_labels;
  std::vector<std::uint8_t> source_mask;  // samples whose class labels are used
  std::vector<SampleRef> refs;
  std::size_t per_domain = 0;
};

std::size_t steps_per_epoch(std::span<const DomainDataset> datasets, std::size_t m);

/// Builds one epoch of aggregated batches over the train splits. Every domain
/// is shuffled at the start of the epoch and cycled, reshuffling on wrap,
/// until the longest domain has been consumed.
std::vector<AggregatedBatch> make_epoch(std::span<const DomainDataset> datasets, std::size_t m,
                                        std::uint64_t seed, std::span<const int> source_domains);

/// Stacks the given samples of one dataset into [n x 1 x s x s].
Tensor stack_images(const DomainDataset& dataset, std::span<const std::size_t> indices);

void save_datasets(const std::filesystem::path& dir, const std::vector<DomainDataset>& datasets,
                   const GeneratorConfig& config);
std::vector<DomainDataset> load_datasets(const std::filesystem::path& dir);

}  // namespace grda
