#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "mine/common.hpp"

int main(int argc, char** argv) {
  mine::configure_allocator();
  doctest::Context ctx(argc, argv);
  return ctx.run();
}
