// Copyright (c) 2026 The mvci Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MVCI_MVCI_HPP
#define MVCI_MVCI_HPP

#include "mvci/common.hpp"
#include "mvci/config.hpp"
#include "mvci/instrument.hpp"
#include "mvci/matching.hpp"
#include "mvci/p2p.hpp"
#include "mvci/progress.hpp"
#include "mvci/request.hpp"
#include "mvci/rma.hpp"
#include "mvci/runtime.hpp"
#include "mvci/transport.hpp"
#include "mvci/vci.hpp"
#include "mvci/wire.hpp"

#endif  // MVCI_MVCI_HPP
