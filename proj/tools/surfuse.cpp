#include <cstdlib>

#include "surfuse/cli.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Activations are large and short-lived; keep freed blocks in the heap instead of
  // returning them to the kernel after every op.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  return surfuse::cli::run(argc, argv);
}
