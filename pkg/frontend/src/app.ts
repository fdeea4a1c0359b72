/**
 * Browser wiring: owns the document, delegates events to the store, and
 * re-renders the whole view after every state change. All markup comes
 * from render.ts so the page body is a pure function of the store.
 */

import { ApiClient } from "./api.js";
import { renderApp } from "./render.js";
import { SessionStore } from "./state.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function parsePlan(text: string): number[][] {
  return text
    .split("\n")
    .map((line) => line.trim())
    .filter((line) => line.length > 0)
    .map((line) => line.split(/[\s,]+/).map((tok) => Number(tok)));
}

export function main(): void {
  const root = el<HTMLDivElement>("app");
  let store: SessionStore | null = null;

  const redraw = () => {
    if (store) root.innerHTML = renderApp(store.view);
  };

  el<HTMLFormElement>("connect").addEventListener("submit", async (ev) => {
    ev.preventDefault();
    const base = el<HTMLInputElement>("base-url").value.replace(/\/$/, "");
    const preset = el<HTMLInputElement>("preset").value.trim();
    const seed = Number(el<HTMLInputElement>("seed").value);
    const particles = Number(el<HTMLInputElement>("particles").value);
    const debug = el<HTMLInputElement>("debug").checked;
    store = new SessionStore(new ApiClient(base));
    try {
      await store.create({ preset, seed, particles, debug });
    } catch (e) {
      root.innerHTML = `<div class="error banner">${String(e)}</div>`;
      return;
    }
    redraw();
  });

  el<HTMLButtonElement>("stage").addEventListener("click", () => {
    if (!store) return;
    const plan = parsePlan(el<HTMLTextAreaElement>("plan").value);
    const problems = store.stageCandidate(plan);
    if (problems.length) {
      alert(problems.join("\n"));
      return;
    }
    redraw();
  });

  el<HTMLButtonElement>("clear").addEventListener("click", () => {
    store?.clearCandidates();
    redraw();
  });

  root.addEventListener("click", async (ev) => {
    const target = ev.target as HTMLElement;
    if (!store) return;
    if (target.dataset.dim !== undefined && target.dataset.level !== undefined) {
      store.setDial(Number(target.dataset.dim), Number(target.dataset.level));
      redraw();
      return;
    }
    if (target.id === "commit" || target.id === "retry") {
      redraw(); // show the in-flight state before awaiting
      await store.commitWeek();
      redraw();
      return;
    }
    if (target.id === "compare") {
      await store.compareCandidates();
      redraw();
    }
  });
}

main();
