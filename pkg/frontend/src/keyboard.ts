// Keyboard is the primary control surface; every action the UI offers
// has a key. The mapping is a pure function so it can be tested without
// synthesizing DOM events.

export type Action =
  | { kind: "toggle-play" }
  | { kind: "step"; frames: number }
  | { kind: "select-class"; classId: number }
  | { kind: "cycle-class"; delta: 1 | -1 }
  | { kind: "add-label" }
  | { kind: "delete-label" }
  | { kind: "zoom"; factor: number }
  | { kind: "pan"; fraction: number }
  | { kind: "jump"; to: "start" | "end" }
  | { kind: "rate"; factor: number }
  | { kind: "reverse" };

export function keyToAction(key: string, shiftKey: boolean): Action | null {
  switch (key) {
    case " ":
      return { kind: "toggle-play" };
    case "ArrowRight":
      return { kind: "step", frames: shiftKey ? 10 : 1 };
    case "ArrowLeft":
      return { kind: "step", frames: shiftKey ? -10 : -1 };
    case "ArrowUp":
      return { kind: "cycle-class", delta: 1 };
    case "ArrowDown":
      return { kind: "cycle-class", delta: -1 };
    case "Enter":
      return { kind: "add-label" };
    case "Delete":
    case "Backspace":
      return { kind: "delete-label" };
    case "Home":
      return { kind: "jump", to: "start" };
    case "End":
      return { kind: "jump", to: "end" };
    case "+":
    case "=":
      return { kind: "zoom", factor: 0.5 };
    case "-":
    case "_":
      return { kind: "zoom", factor: 2 };
    case "[":
      return { kind: "pan", fraction: -0.25 };
    case "]":
      return { kind: "pan", fraction: 0.25 };
    case ",":
      return { kind: "rate", factor: 0.5 };
    case ".":
      return { kind: "rate", factor: 2 };
    case "r":
      return { kind: "reverse" };
    default:
      if (key.length === 1 && key >= "0" && key <= "9") {
        return { kind: "select-class", classId: Number(key) };
      }
      return null;
  }
}

export const KEY_HELP =
  "space play/pause · arrows step (shift: x10) · 0-9 class · " +
  "up/down cycle class · enter add · del remove · +/- zoom · [ ] pan · " +
  ", . speed · r reverse · home/end jump";
