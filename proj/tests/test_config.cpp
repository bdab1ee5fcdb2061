#include <sstream>
#include <string>

#include "doctest.h"
#include "faqs/config.hpp"
#include "faqs/errors.hpp"

using namespace faqs;

namespace {

const char* kBase = R"(
rounds = 3
clients = 3
image_size = 8
stem_channels = 4
layers = 4:4:1, 4:8:2   # two layers
alpha = 0.8
beta = 0.1
gamma = 0.1
[client 2]
alpha = 1
beta = 0
gamma = 0
)";

RunConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in, "test.cfg");
}

std::string error_of(const std::string& text) {
  try {
    parse(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("config: values, defaults and client sections") {
  const auto c = parse(kBase);
  CHECK(c.rounds == 3);
  CHECK(c.clients == 3);
  CHECK(c.plan.layers.size() == 2);
  CHECK(c.plan.layers[1].c_out == 8);
  CHECK(c.plan.layers[1].stride == 2);
  CHECK(c.plan.image_size == 8);
  CHECK(c.data.height == 8);
  REQUIRE(c.profiles.size() == 3);
  CHECK(c.profiles[0].alpha == 0.8);
  CHECK(c.profiles[1].gamma == 0.1);
  CHECK(c.profiles[2].alpha == 1.0);
  CHECK(c.finetune() == 5 * c.local_epochs);
}

TEST_CASE("config: errors name the field") {
  CHECK(error_of(std::string(kBase) + "bogus = 1\n").find("'bogus'") != std::string::npos);
  CHECK(error_of(std::string(kBase) + "\nrounds = -1\n").find("'rounds'") != std::string::npos);
  CHECK(error_of("rounds = 3\nlr_w = fast\nlayers = 8:8:1\n").find("line 2") != std::string::npos);
  CHECK(error_of(std::string(kBase) + "[client 5]\nalpha = 1\n").find("client 5") != std::string::npos);
  CHECK(error_of(std::string(kBase) + "[client 1]\nalpha = 0.5\n").find("client 1") != std::string::npos);
  CHECK(error_of("layers = 8:8:1, 4:4:1\n").find("c_in") != std::string::npos);
  CHECK(error_of("layers = 8:8\n").find("'layers'") != std::string::npos);
  CHECK(error_of("lr_t = 0\nlayers = 8:8:1\n").find("lr_t") != std::string::npos);
  CHECK(error_of("baseline_block = 3:4\nlayers = 8:8:1\n").find("baseline_block") != std::string::npos);
  CHECK(error_of("").find("layer") != std::string::npos);
  CHECK_THROWS_AS(load_config("no/such/file.cfg"), ConfigError);
}

TEST_CASE("config: canonical text round trips") {
  const auto c = parse(kBase);
  const std::string text = write_config(c);
  CHECK(write_config(parse(text)) == text);
}

TEST_CASE("config: bundled configurations validate") {
  for (const char* name : {"tiny.cfg", "default.cfg", "sanity.cfg", "pareto.cfg"}) {
    const auto c = load_config(std::string(FAQS_SOURCE_DIR) + "/configs/" + name);
    CHECK_NOTHROW(c.validate());
  }
  const auto d = load_config(std::string(FAQS_SOURCE_DIR) + "/configs/default.cfg");
  CHECK(d.plan.layers.size() == 6);
  CHECK(d.clients == 8);
  CHECK(d.rounds == 30);
}
