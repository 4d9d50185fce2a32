#include "grda/config_json.hpp"

namespace grda {

using nlohmann::json;

namespace {
template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) it->get_to(out);
}
}  // namespace

void to_json(json& j, const ModelConfig& c) {
  j = {{"input_size", c.input_size},     {"conv_channels", c.conv_channels},
       {"tap_width", c.tap_width},       {"hidden_width", c.hidden_width},
       {"num_classes", c.num_classes},   {"num_domains", c.num_domains},
       {"leaky_slope", c.leaky_slope}};
}

void from_json(const json& j, ModelConfig& c) {
  read_opt(j, "input_size", c.input_size);
  read_opt(j, "conv_channels", c.conv_channels);
  read_opt(j, "tap_width", c.tap_width);
  read_opt(j, "hidden_width", c.hidden_width);
  read_opt(j, "num_classes", c.num_classes);
  read_opt(j, "num_domains", c.num_domains);
  read_opt(j, "leaky_slope", c.leaky_slope);
}

void to_json(json& j, const TrainConfig& c) {
  j = {{"protocol", to_string(c.protocol)},
       {"epochs", c.epochs},
       {"batch_per_domain", c.batch_per_domain},
       {"learning_rate", c.learning_rate},
       {"source_domain", c.source_domain},
       {"active_domains", c.active_domains},
       {"alpha", c.alpha},
       {"clamp", c.clamp},
       {"seed", c.seed},
       {"eval_every", c.eval_every},
       {"model", c.model}};
}

void from_json(const json& j, TrainConfig& c) {
  if (auto it = j.find("protocol"); it != j.end()) c.protocol = parse_protocol(it->get<std::string>());
  read_opt(j, "epochs", c.epochs);
  read_opt(j, "batch_per_domain", c.batch_per_domain);
  read_opt(j, "learning_rate", c.learning_rate);
  read_opt(j, "source_domain", c.source_domain);
  read_opt(j, "active_domains", c.active_domains);
  read_opt(j, "alpha", c.alpha);
  read_opt(j, "clamp", c.clamp);
  read_opt(j, "seed", c.seed);
  read_opt(j, "eval_every", c.eval_every);
  read_opt(j, "model", c.model);
}

void to_json(json& j, const GeneratorConfig& c) {
  j = {{"num_domains", c.num_domains}, {"num_classes", c.num_classes},
       {"per_class", c.per_class},     {"image_size", c.image_size},
       {"shift", c.shift},             {"seed", c.seed}};
}

void from_json(const json& j, GeneratorConfig& c) {
  read_opt(j, "num_domains", c.num_domains);
  read_opt(j, "num_classes", c.num_classes);
  read_opt(j, "per_class", c.per_class);
  read_opt(j, "image_size", c.image_size);
  read_opt(j, "shift", c.shift);
  read_opt(j, "seed", c.seed);
}

}  // namespace grda
