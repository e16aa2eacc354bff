import init, { resolve_key, key_partition, schedule_example, error_rate_curve } from "./pkg/polylock_web.js";

const $ = (id) => document.getElementById(id);
const LABELS = ["C1", "P1", "C2", "P2", "C3", "P3", "C4", "P4"];
const bits = [0, 0, 1, 0, 1, 0, 0, 0];

function guard(target, f) {
  try {
    f();
  } catch (e) {
    target.innerHTML = `<p class="error">${e}</p>`;
  }
}

function renderBits() {
  $("bits").innerHTML = bits
    .map((b, i) => `<button data-i="${i}" title="${LABELS[i]}">${b}</button>`)
    .join("");
  for (const btn of $("bits").querySelectorAll("button")) {
    btn.onclick = () => {
      bits[btn.dataset.i] ^= 1;
      renderBits();
    };
  }
  renderKey();
}

function showWord(w) {
  return w.unknown ? `${w.value} (unknown mask ${w.unknown.toString(2)})` : `${w.value}`;
}

function renderKey() {
  guard($("key-out"), () => {
    const r = JSON.parse(resolve_key(bits.join(""), +$("x").value & 255, +$("y").value & 255, $("policy").value));
    const ts = r.transistors
      .map((t, i) => `<td class="${t.on ? "on" : ""}">T${i + 1}: ${t.on ? "on" : "off"}</td>`)
      .join("");
    $("key-out").innerHTML = `
      <table><tr>${ts}</tr></table>
      <p>Mode: <b class="${r.mode}">${r.mode}</b> (class ${r.class});
         Z driven by ${r.z_drivers}, W driven by ${r.w_drivers}</p>
      <p>Z = ${showWord(r.z)}, W = ${showWord(r.w)}</p>`;
  });
}

function renderClasses() {
  const { classes } = JSON.parse(key_partition());
  const rows = classes
    .map((c) => `<tr><td>${c.class}</td><td>${c.z}</td><td>${c.w}</td><td class="${c.mode}">${c.mode}</td>
                 <td><code>${c.keys.slice(0, 4).join(" ")} ...</code></td></tr>`)
    .join("");
  $("classes").innerHTML = `<table><tr><th>class</th><th>Z</th><th>W</th><th>mode</th><th>keys</th></tr>${rows}</table>`;
}

function renderSchedule() {
  const l = +$("latency").value;
  $("latency-val").textContent = l;
  guard($("sched-out"), () => {
    const s = JSON.parse(schedule_example(l));
    const header = Array.from({ length: l }, (_, i) => `<th>t${i + 1}</th>`).join("");
    const rows = s.nodes
      .map((n) => {
        const cells = Array.from({ length: l }, (_, i) => {
          const t = i + 1;
          if (t === n.step) return `<td class="on"><b>${n.id}</b></td>`;
          return t >= n.asap && t <= n.alap ? "<td>&middot;</td>" : "<td></td>";
        }).join("");
        return `<tr><td>${n.id}</td><td>${n.op}</td><td>${n.w}</td>${cells}</tr>`;
      })
      .join("");
    const fus = s.fus.filter((f) => f.count).map((f) => `${f.count} ${f.op}`).join(", ");
    $("sched-out").innerHTML = `
      <table><tr><th>node</th><th>op</th><th>w</th>${header}</tr>${rows}</table>
      <p>Dots mark each node's time frame. Functional units: ${fus}.</p>`;
  });
}

function renderCurve() {
  $("curve-out").textContent = "running...";
  setTimeout(() => guard($("curve-out"), () => {
    const c = JSON.parse(error_rate_curve(+$("ops").value, +$("seed").value, +$("trials").value, 30));
    const W = 480, H = 220, P = 36;
    const x = (b) => P + (b / 30) * (W - 2 * P);
    const y = (r) => H - P - r * (H - 2 * P);
    const path = c.points.map((p, i) => `${i ? "L" : "M"}${x(p.budget)},${y(p.error_rate)}`).join("");
    const dots = c.points.map((p) => `<circle cx="${x(p.budget)}" cy="${y(p.error_rate)}" r="3"/>`).join("");
    const ticks = c.points
      .map((p) => `<text x="${x(p.budget)}" y="${H - P + 16}" text-anchor="middle">${p.budget}%</text>`)
      .join("");
    const rows = c.points
      .map((p) => `<tr><td>${p.budget}%</td><td>${p.sbs}</td><td>${p.overhead.toFixed(2)}%</td><td>${p.error_rate.toFixed(4)}</td></tr>`)
      .join("");
    $("curve-out").innerHTML = `
      <svg width="${W}" height="${H}" font-size="11">
        <line x1="${P}" y1="${H - P}" x2="${W - P}" y2="${H - P}" stroke="#888"/>
        <line x1="${P}" y1="${P}" x2="${P}" y2="${H - P}" stroke="#888"/>
        <text x="${P - 4}" y="${y(1) + 4}" text-anchor="end">1</text>
        <text x="${P - 4}" y="${y(0) + 4}" text-anchor="end">0</text>
        ${ticks}<path d="${path}" fill="none" stroke="#05a"/>${dots}
      </svg>
      <table><tr><th>budget</th><th>boxes</th><th>overhead</th><th>error rate</th></tr>${rows}</table>
      <p>${c.ops} operations scheduled in ${c.latency} steps.</p>`;
  }), 10);
}

await init();
renderBits();
renderClasses();
renderSchedule();
for (const id of ["x", "y", "policy"]) $(id).oninput = renderKey;
$("latency").oninput = renderSchedule;
$("run").onclick = renderCurve;
renderCurve();
