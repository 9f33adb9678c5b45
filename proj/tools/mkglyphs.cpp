// mkglyphs: writes a synthetic stroke-rendered digit corpus in MNIST IDX
// format (train + t10k pairs) for running the pipeline without the real
// MNIST files.

#include <iostream>

#include <CLI11.hpp>

#include "pan/errors.hpp"
#include "pan/glyphs.hpp"

int main(int argc, char** argv) {
  CLI::App app{"synthetic digit corpus in MNIST IDX format"};
  std::string out_dir;
  std::uint64_t seed = 1;
  int train_per_class = 400;
  int test_per_class = 100;
  app.add_option("--out", out_dir, "output directory")->required();
  app.add_option("--seed", seed, "corpus seed");
  app.add_option("--train-per-class", train_per_class, "train glyphs per digit");
  app.add_option("--test-per-class", test_per_class, "test glyphs per digit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    pan::write_stub_mnist_dir(out_dir, seed, train_per_class, test_per_class);
    std::cout << "wrote IDX corpus to " << out_dir << " (" << train_per_class * 10
              << " train, " << test_per_class * 10 << " test glyphs)\n";
  } catch (const pan::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  }
  return 0;
}
