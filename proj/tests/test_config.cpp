#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "parot/config.hpp"

using parot::cfg::Config;

TEST_CASE("defaults are available without a file") {
  Config c;
  CHECK(c.get_int("k_prop") == 11);
  CHECK(c.get_real("lr_start") == doctest::Approx(1e-3));
  CHECK(c.get_real("alpha_local") == doctest::Approx(0.2));
  CHECK(c.get_real("beta_local") == doctest::Approx(0.0));
  CHECK(c.get_string("relation_mode") == "full");
  CHECK_FALSE(c.get_bool("interp_baseline"));
}

TEST_CASE("file parsing: comments, whitespace, overrides") {
  {
    std::ofstream os("cfg_ok.txt");
    os << "# training run\n";
    os << "epochs = 5\n";
    os << "  protocol=so3so3  # inline comment\n";
    os << "\n";
    os << "lr_start = 2e-3\n";
  }
  auto c = Config::from_file("cfg_ok.txt");
  CHECK(c.get_int("epochs") == 5);
  CHECK(c.get_string("protocol") == "so3so3");
  CHECK(c.get_real("lr_start") == doctest::Approx(2e-3));
  CHECK(c.get_int("batch_size") == 32);  // untouched default
  std::remove("cfg_ok.txt");
}

TEST_CASE("unknown key rejected with file and line context") {
  {
    std::ofstream os("cfg_bad.txt");
    os << "epochs = 5\nlr_strat = 1e-3\n";
  }
  CHECK_THROWS_WITH_AS(Config::from_file("cfg_bad.txt"), doctest::Contains("line 2"),
                       std::runtime_error);
  CHECK_THROWS_WITH_AS(Config::from_file("cfg_bad.txt"), doctest::Contains("lr_strat"),
                       std::runtime_error);
  std::remove("cfg_bad.txt");
}

TEST_CASE("range and type validation") {
  Config c;
  CHECK_THROWS_AS(c.set("k_prop", "2"), std::invalid_argument);    // below range
  CHECK_THROWS_AS(c.set("k_prop", "14"), std::invalid_argument);   // above range
  CHECK_THROWS_AS(c.set("k_prop", "7.5"), std::invalid_argument);  // not integral
  CHECK_THROWS_AS(c.set("epochs", "ten"), std::invalid_argument);
  CHECK_THROWS_AS(c.set("protocol", "diag"), std::invalid_argument);
  CHECK_THROWS_AS(c.set("disable_intra", "maybe"), std::invalid_argument);
  CHECK_THROWS_AS(c.set("seed", "-1"), std::invalid_argument);
  c.set("k_prop", "3");
  CHECK(c.get_int("k_prop") == 3);
}

TEST_CASE("later set overrides earlier (flag-over-file semantics)") {
  Config c;
  c.set("epochs", "10");
  c.set("epochs", "20");
  CHECK(c.get_int("epochs") == 20);
}

TEST_CASE("render lists every registered key exactly once") {
  Config c;
  c.set("epochs", "3");
  auto text = c.render();
  for (const auto& key : Config::known_keys())
    CHECK(text.find(key + " = ") != std::string::npos);
  CHECK(text.find("epochs = 3\n") != std::string::npos);
  // render output itself parses back
  {
    std::ofstream os("cfg_echo.txt");
    os << text;
  }
  auto back = Config::from_file("cfg_echo.txt");
  CHECK(back.render() == text);
  std::remove("cfg_echo.txt");
}
