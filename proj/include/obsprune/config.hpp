// Copyright (c) 2026 The obsprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace obsprune {

// Numerical tolerances shared by validation code and tests.
struct Tolerances {
  // ||L*L^T - M||_inf and ||M*M^-1 - I||_inf bounds.
  static constexpr double reconstruction = 1e-8;
  // Allowed |M - M^T| relative to max |M| before symmetrization.
  static constexpr double symmetry = 1e-9;
  // Trailing-Cholesky refresh versus full re-inversion.
  static constexpr double refresh_agreement = 1e-6;
};

}  // namespace obsprune
