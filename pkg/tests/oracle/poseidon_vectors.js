// Random Poseidon vectors from circomlibjs (arity 1..4, five each).
const { buildPoseidon } = require("circomlibjs");
const crypto = require("crypto");
(async () => {
  const p = await buildPoseidon();
  const F = p.F;
  const r = BigInt("21888242871839275222246405745257275088548364400416034343698204186575808495617");
  const out = [];
  for (let k = 1; k <= 4; k++) for (let i = 0; i < 5; i++) {
    const inp = [];
    for (let j = 0; j < k; j++) inp.push((BigInt("0x" + crypto.randomBytes(32).toString("hex")) % r).toString());
    out.push({ inputs: inp, output: F.toString(p(inp.map(BigInt))) });
  }
  console.log(JSON.stringify(out, null, 1));
})();
