/** Regenerate fixtures/golden_bundle.json from fixtures/golden_sketch.json.
 * Run after any change to the bundle-building logic, then re-record the
 * server response with scripts/record_response.py. */

import { readFileSync, writeFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { buildBundle } from "../src/bundle.js";

const here = dirname(fileURLToPath(import.meta.url));
const fixtures = join(here, "..", "..", "fixtures");

const doc = JSON.parse(readFileSync(join(fixtures, "golden_sketch.json"), "utf8"));
const bundle = buildBundle(doc.sketch, doc.options);
writeFileSync(join(fixtures, "golden_bundle.json"), JSON.stringify(bundle, null, 2) + "\n");
console.log(`wrote golden_bundle.json (${bundle.trajectory_cells.length} trajectory cells)`);
