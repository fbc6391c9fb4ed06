import json

with open("input.geojson") as f:
    data = json.load(f)

for feature in data["features"]:
    feature["properties"]["margin_intervention"] = undefined_threshold
    feature["properties"]["habitat_conversion"] = 0.0

with open("output.geojson", "w") as f:
    json.dump(data, f)
