#include <iostream>

#include "common.hpp"
#include "latentvol/errors.hpp"

int main(int argc, char** argv) {
  using namespace latentvol;
  CLI::App app{"latentvol: latent diffusion for 3D medical volumes"};
  app.require_subcommand(1);
  cli::register_train(app);
  cli::register_prep(app);
  cli::register_transfer(app);
  cli::register_study(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
