// acceptance suite placeholder
