#pragma once

namespace leanres {

// Kernel thread count. Without OpenMP every kernel is serial and this is a no-op.
void set_num_threads(int n);
int num_threads();

}  // namespace leanres
