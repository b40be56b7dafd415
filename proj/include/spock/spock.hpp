/*
 Copyright 2026 The spock-cpp Authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/

#pragma once

#include "spock/anderson.hpp"
#include "spock/cp.hpp"
#include "spock/model.hpp"
#include "spock/prox.hpp"
#include "spock/risk.hpp"
#include "spock/splitting.hpp"
#include "spock/supermann.hpp"
#include "spock/tree.hpp"
#include "spock/types.hpp"
